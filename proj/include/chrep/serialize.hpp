#ifndef CHREP_SERIALIZE_HPP
#define CHREP_SERIALIZE_HPP

#include "chrep/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace chrep {

struct NamedTensor {
    std::string name;
    Tensor2 value;
};

/// A JSON header followed by named tensors.
///
/// On-disk layout, all integers and doubles little-endian:
///
///     "CHRT"                      4-byte magic
///     u32   format version (1)
///     u64   header length n, then n bytes of UTF-8 JSON
///     u32   tensor count
///     per tensor:
///       u32 name length m, m bytes of name
///       u64 rows, u64 cols
///       rows*cols IEEE-754 binary64 values, row-major
struct TensorArchive {
    nlohmann::json header = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    const Tensor2& at(const std::string& name) const;
    bool contains(const std::string& name) const;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

} // namespace chrep

#endif
