#ifndef CHREP_WARNINGS_HPP
#define CHREP_WARNINGS_HPP

#include <string>
#include <vector>

namespace chrep {

// Non-fatal contract warnings (clipped k, skipped PCC term, unnormalized
// coordinates). Recorded per thread so concurrent experiment cells keep
// separate logs.
void warn(std::string message);
std::vector<std::string> take_warnings();
std::size_t warning_count();

} // namespace chrep

#endif
