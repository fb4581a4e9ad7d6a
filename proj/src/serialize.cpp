#include "chrep/serialize.hpp"

#include "chrep/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace chrep {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw IoError("archive: unexpected end of file");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}

std::string get_bytes(std::istream& is, std::size_t n) {
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("archive: truncated string");
    return s;
}

} // namespace

const Tensor2& TensorArchive::at(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.value;
    throw InvalidInput("archive: no tensor named '" + name + "'");
}

bool TensorArchive::contains(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write("CHRT", 4);
    put_le<std::uint32_t>(os, kArchiveVersion);
    const std::string header = archive.header.dump();
    put_le<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(archive.tensors.size()));
    for (const auto& t : archive.tensors) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put_le<std::uint64_t>(os, t.value.rows());
        put_le<std::uint64_t>(os, t.value.cols());
        for (double v : t.value.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw IoError("write failed for " + path.string());
}

TensorArchive read_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    if (get_bytes(is, 4) != "CHRT") throw InvalidInput(path.string() + ": not a tensor archive");
    const auto version = get_le<std::uint32_t>(is);
    if (version != kArchiveVersion) {
        throw InvalidInput(path.string() + ": unsupported archive version " + std::to_string(version));
    }
    TensorArchive out;
    const auto hlen = get_le<std::uint64_t>(is);
    out.header = nlohmann::json::parse(get_bytes(is, hlen));
    const auto count = get_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = get_bytes(is, get_le<std::uint32_t>(is));
        const auto rows = get_le<std::uint64_t>(is);
        const auto cols = get_le<std::uint64_t>(is);
        std::vector<double> data(rows * cols);
        for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
        t.value = Tensor2(rows, cols, std::move(data));
        out.tensors.push_back(std::move(t));
    }
    return out;
}

} // namespace chrep
