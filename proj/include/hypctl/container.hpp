// Binary container framing shared by the model ("KNO1"), dataset ("KDS1"),
// and tensor-dump ("KTN1") files:
//
//   magic (4 bytes) | version (u32 LE) | descriptor length (u32 LE)
//   | descriptor (UTF-8, typically JSON) | payload arrays (float64 LE,
//   in descriptor order, no padding)
//
// Readers validate magic, version, and exact file length before handing any
// data to the caller, so a corrupted file is rejected without partial
// results.  All failures throw std::runtime_error naming the path and byte
// offset.
#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

namespace hypctl {

class ContainerWriter {
  public:
    ContainerWriter(const std::string& path, const char magic[4],
                    std::uint32_t version);
    ~ContainerWriter();
    ContainerWriter(const ContainerWriter&) = delete;
    ContainerWriter& operator=(const ContainerWriter&) = delete;

    void write_descriptor(const std::string& utf8);
    void write_f64(const double* p, std::size_t n);
    void close();  // flushes and detects write failure; throws on error

  private:
    std::FILE* f_ = nullptr;
    std::string path_;
};

class ContainerReader {
  public:
    ContainerReader(const std::string& path, const char magic[4],
                    std::uint32_t expect_version);
    ~ContainerReader();
    ContainerReader(const ContainerReader&) = delete;
    ContainerReader& operator=(const ContainerReader&) = delete;

    const std::string& descriptor() const { return descriptor_; }
    std::uint32_t version() const { return version_; }

    void read_f64(double* p, std::size_t n);
    void seek_payload(std::uint64_t f64_offset);  // random record access
    std::uint64_t payload_f64_count() const;      // total payload doubles
    void expect_consumed();  // throws unless the payload was read exactly

  private:
    std::FILE* f_ = nullptr;
    std::string path_;
    std::string descriptor_;
    std::uint32_t version_ = 0;
    std::uint64_t payload_start_ = 0;
    std::uint64_t file_size_ = 0;
    std::uint64_t pos_ = 0;  // current byte offset
};

} // namespace hypctl
