#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "deconf/common.hpp"
#include "deconf/matrix.hpp"

namespace deconf::io {

// All writers go through a temp file + rename so partially written artifacts
// never appear under the final name.
class AtomicFile {
 public:
  explicit AtomicFile(const std::filesystem::path& path)
      : path_(path), tmp_(path.string() + ".tmp"), out_(tmp_, std::ios::binary) {
    if (!out_) throw IoError("cannot open " + tmp_.string() + " for writing");
  }

  std::ofstream& stream() { return out_; }

  void commit() {
    out_.flush();
    if (!out_) throw IoError("write failed for " + tmp_.string());
    out_.close();
    std::error_code ec;
    std::filesystem::rename(tmp_, path_, ec);
    if (ec) throw IoError("rename " + tmp_.string() + " -> " + path_.string() +
                          " failed: " + ec.message());
    committed_ = true;
  }

  ~AtomicFile() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(tmp_, ec);
    }
  }

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("bad number '" + std::string(s) + "' in " + where);
  }
  return v;
}

inline long long parse_int(std::string_view s, const std::string& where) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("bad integer '" + std::string(s) + "' in " + where);
  }
  return v;
}

inline std::vector<std::string_view> split_line(std::string_view line,
                                                char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

struct Triplet {
  std::uint32_t row;
  std::uint32_t col;
  double value;
};

// Dense matrix, one row per line; optional header and leading '#' comments.
void write_dense_csv(const std::filesystem::path& path,
                     const numkit::Matrix& m,
                     const std::vector<std::string>& header,
                     const std::string& comment = "");
numkit::Matrix read_dense_csv(const std::filesystem::path& path,
                              bool expect_header);

// Integer matrix, one row per line, no header.
void write_dense_byte_csv(const std::filesystem::path& path,
                          const numkit::ByteMatrix& m,
                          const std::string& comment = "");
numkit::ByteMatrix read_dense_byte_csv(const std::filesystem::path& path);

// Sparse triplet format `u,i,v` with a header row.
void write_triplet_csv(const std::filesystem::path& path,
                       const std::vector<Triplet>& triplets,
                       const std::string& header_line,
                       const std::string& comment = "");
std::vector<Triplet> read_triplet_csv(const std::filesystem::path& path);

void write_text_atomic(const std::filesystem::path& path,
                       const std::string& content);
std::string read_text(const std::filesystem::path& path);

}  // namespace deconf::io
