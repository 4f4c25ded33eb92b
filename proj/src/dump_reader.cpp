#include "dump_reader.hpp"

#include <zlib.h>

#include <array>
#include <cstring>
#include <fstream>
#include <vector>

#include "specbench/error.hpp"

namespace specbench {
namespace {

// Buffered line splitting on top of a raw chunk reader.
class BufferedSource : public LineSource {
 public:
  bool next_line(std::string& line, std::uint64_t& offset) override {
    line.clear();
    offset = position_;
    bool any = false;
    while (true) {
      if (head_ == size_) {
        size_ = read_chunk(buffer_.data(), buffer_.size());
        head_ = 0;
        if (size_ == 0) return any;
      }
      const char* start = buffer_.data() + head_;
      const void* nl = std::memchr(start, '\n', size_ - head_);
      if (nl != nullptr) {
        const auto len = static_cast<std::size_t>(static_cast<const char*>(nl) - start);
        line.append(start, len);
        head_ += len + 1;
        position_ += len + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
      }
      line.append(start, size_ - head_);
      position_ += size_ - head_;
      head_ = size_;
      any = true;
    }
  }

 protected:
  virtual std::size_t read_chunk(char* dst, std::size_t capacity) = 0;

 private:
  std::array<char, 1 << 16> buffer_{};
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::uint64_t position_ = 0;
};

class PlainSource final : public BufferedSource {
 public:
  explicit PlainSource(const std::filesystem::path& path)
      : in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open dump " + path.string());
  }
  bool compressed() const override { return false; }

 protected:
  std::size_t read_chunk(char* dst, std::size_t capacity) override {
    in_.read(dst, static_cast<std::streamsize>(capacity));
    return static_cast<std::size_t>(in_.gcount());
  }

 private:
  std::ifstream in_;
};

class GzipSource final : public BufferedSource {
 public:
  explicit GzipSource(const std::filesystem::path& path)
      : file_(gzopen(path.c_str(), "rb")), path_(path.string()) {
    if (file_ == nullptr) throw Error("cannot open dump " + path_);
    gzbuffer(file_, 1 << 17);
  }
  ~GzipSource() override { gzclose(file_); }
  GzipSource(const GzipSource&) = delete;
  GzipSource& operator=(const GzipSource&) = delete;

  bool compressed() const override { return true; }

 protected:
  std::size_t read_chunk(char* dst, std::size_t capacity) override {
    const int n = gzread(file_, dst, static_cast<unsigned>(capacity));
    if (n < 0) {
      int code = 0;
      const char* msg = gzerror(file_, &code);
      throw Error("gzip read error in " + path_ + ": " + msg);
    }
    return static_cast<std::size_t>(n);
  }

 private:
  gzFile file_;
  std::string path_;
};

}  // namespace

std::unique_ptr<LineSource> LineSource::open(const std::filesystem::path& path) {
  std::array<unsigned char, 3> magic{};
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw Error("cannot open dump " + path.string());
    probe.read(reinterpret_cast<char*>(magic.data()), magic.size());
    const auto got = probe.gcount();
    if (got >= 2 && magic[0] == 0x1f && magic[1] == 0x8b) {
      return std::make_unique<GzipSource>(path);
    }
    if (got >= 3 && magic[0] == 'B' && magic[1] == 'Z' && magic[2] == 'h') {
      throw Error("bzip2 dumps are not supported; recompress with gzip: " +
                  path.string());
    }
  }
  return std::make_unique<PlainSource>(path);
}

}  // namespace specbench
