#include "hypctl/container.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "container formats are little-endian; big-endian hosts would "
              "need byte swapping that is not implemented");
static_assert(sizeof(double) == 8, "containers store IEEE-754 binary64");

namespace hypctl {

namespace {

[[noreturn]] void fail(const std::string& path, std::uint64_t offset,
                       const std::string& what) {
    throw std::runtime_error("container " + path + ": " + what +
                             " at offset " + std::to_string(offset));
}

} // namespace

ContainerWriter::ContainerWriter(const std::string& path, const char magic[4],
                                 std::uint32_t version)
    : path_(path) {
    f_ = std::fopen(path.c_str(), "wb");
    if (!f_)
        throw std::runtime_error("container " + path + ": cannot open for writing");
    if (std::fwrite(magic, 1, 4, f_) != 4 ||
        std::fwrite(&version, sizeof version, 1, f_) != 1)
        fail(path_, 0, "write failed");
}

ContainerWriter::~ContainerWriter() {
    if (f_)
        std::fclose(f_);  // close() not called: best effort, error already thrown or caller bailed
}

void ContainerWriter::write_descriptor(const std::string& utf8) {
    const std::uint32_t len = static_cast<std::uint32_t>(utf8.size());
    if (utf8.size() != len)
        throw std::runtime_error("container " + path_ + ": descriptor too large");
    if (std::fwrite(&len, sizeof len, 1, f_) != 1 ||
        (len && std::fwrite(utf8.data(), 1, len, f_) != len))
        fail(path_, 8, "descriptor write failed");
}

void ContainerWriter::write_f64(const double* p, std::size_t n) {
    if (n && std::fwrite(p, sizeof(double), n, f_) != n)
        fail(path_, static_cast<std::uint64_t>(std::ftell(f_)), "payload write failed");
}

void ContainerWriter::close() {
    if (!f_)
        return;
    const int rc = std::fclose(f_);
    f_ = nullptr;
    if (rc != 0)
        throw std::runtime_error("container " + path_ + ": close failed (disk full?)");
}

ContainerReader::ContainerReader(const std::string& path, const char magic[4],
                                 std::uint32_t expect_version)
    : path_(path) {
    f_ = std::fopen(path.c_str(), "rb");
    if (!f_)
        throw std::runtime_error("container " + path + ": cannot open");
    if (std::fseek(f_, 0, SEEK_END) != 0)
        fail(path_, 0, "seek failed");
    file_size_ = static_cast<std::uint64_t>(std::ftell(f_));
    std::rewind(f_);

    char got[4];
    if (file_size_ < 12 || std::fread(got, 1, 4, f_) != 4)
        fail(path_, 0, "truncated header");
    if (std::memcmp(got, magic, 4) != 0)
        fail(path_, 0, std::string("bad magic, expected \"") +
                           std::string(magic, 4) + "\"");
    if (std::fread(&version_, sizeof version_, 1, f_) != 1)
        fail(path_, 4, "truncated version");
    if (version_ != expect_version)
        fail(path_, 4, "unsupported version " + std::to_string(version_) +
                           ", expected " + std::to_string(expect_version));
    std::uint32_t len = 0;
    if (std::fread(&len, sizeof len, 1, f_) != 1)
        fail(path_, 8, "truncated descriptor length");
    if (file_size_ < 12 + static_cast<std::uint64_t>(len))
        fail(path_, 12, "descriptor extends past end of file");
    descriptor_.resize(len);
    if (len && std::fread(descriptor_.data(), 1, len, f_) != len)
        fail(path_, 12, "truncated descriptor");
    payload_start_ = 12 + len;
    pos_ = payload_start_;
    if ((file_size_ - payload_start_) % sizeof(double) != 0)
        fail(path_, payload_start_, "payload size is not a multiple of 8");
}

ContainerReader::~ContainerReader() {
    if (f_)
        std::fclose(f_);
}

std::uint64_t ContainerReader::payload_f64_count() const {
    return (file_size_ - payload_start_) / sizeof(double);
}

void ContainerReader::seek_payload(std::uint64_t f64_offset) {
    const std::uint64_t byte = payload_start_ + f64_offset * sizeof(double);
    if (byte > file_size_)
        fail(path_, byte, "seek past end of payload");
    if (std::fseek(f_, static_cast<long>(byte), SEEK_SET) != 0)
        fail(path_, byte, "seek failed");
    pos_ = byte;
}

void ContainerReader::read_f64(double* p, std::size_t n) {
    const std::uint64_t need = n * sizeof(double);
    if (pos_ + need > file_size_)
        fail(path_, pos_, "truncated payload (need " + std::to_string(need) +
                              " more bytes)");
    if (n && std::fread(p, sizeof(double), n, f_) != n)
        fail(path_, pos_, "read failed");
    pos_ += need;
}

void ContainerReader::expect_consumed() {
    if (pos_ != file_size_)
        fail(path_, pos_, "trailing bytes: file has " +
                              std::to_string(file_size_ - pos_) +
                              " unread payload bytes");
}

} // namespace hypctl
