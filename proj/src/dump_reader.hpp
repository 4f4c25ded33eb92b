#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

namespace specbench {

// Line reader over a plain or gzip-compressed file. Compression is sniffed
// from the magic bytes, not the extension.
class LineSource {
 public:
  virtual ~LineSource() = default;

  // Reads the next line without its terminator. `offset` receives the
  // decompressed byte offset of the line start.
  virtual bool next_line(std::string& line, std::uint64_t& offset) = 0;
  virtual bool compressed() const = 0;

  static std::unique_ptr<LineSource> open(const std::filesystem::path& path);
};

}  // namespace specbench
