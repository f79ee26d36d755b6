#include "deconf/csv.hpp"

#include <sstream>

namespace deconf::io {

namespace {

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

bool is_comment_or_empty(const std::string& line) {
  return line.empty() || line[0] == '#';
}

}  // namespace

void write_dense_csv(const std::filesystem::path& path,
                     const numkit::Matrix& m,
                     const std::vector<std::string>& header,
                     const std::string& comment) {
  AtomicFile file(path);
  auto& out = file.stream();
  if (!comment.empty()) out << "# " << comment << "\n";
  if (!header.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      out << (j ? "," : "") << header[j];
    }
    out << "\n";
  }
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      out << (j ? "," : "") << format_double(m.at(i, j));
    }
    out << "\n";
  }
  file.commit();
}

numkit::Matrix read_dense_csv(const std::filesystem::path& path,
                              bool expect_header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  bool header_skipped = !expect_header;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (is_comment_or_empty(line)) continue;
    if (!header_skipped) {
      header_skipped = true;
      continue;
    }
    const auto fields = split_line(line);
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto f : fields) row.push_back(parse_double(f, path.string()));
    if (!rows.empty() && rows.front().size() != row.size()) {
      throw IoError("ragged rows in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  numkit::Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = rows[i][j];
  }
  return m;
}

void write_dense_byte_csv(const std::filesystem::path& path,
                          const numkit::ByteMatrix& m,
                          const std::string& comment) {
  AtomicFile file(path);
  auto& out = file.stream();
  if (!comment.empty()) out << "# " << comment << "\n";
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      out << (j ? "," : "") << static_cast<int>(m.at(i, j));
    }
    out << "\n";
  }
  file.commit();
}

numkit::ByteMatrix read_dense_byte_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<std::uint8_t>> rows;
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (is_comment_or_empty(line)) continue;
    const auto fields = split_line(line);
    std::vector<std::uint8_t> row;
    row.reserve(fields.size());
    for (const auto f : fields) {
      row.push_back(static_cast<std::uint8_t>(parse_int(f, path.string())));
    }
    if (!rows.empty() && rows.front().size() != row.size()) {
      throw IoError("ragged rows in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  numkit::ByteMatrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = rows[i][j];
  }
  return m;
}

void write_triplet_csv(const std::filesystem::path& path,
                       const std::vector<Triplet>& triplets,
                       const std::string& header_line,
                       const std::string& comment) {
  AtomicFile file(path);
  auto& out = file.stream();
  if (!comment.empty()) out << "# " << comment << "\n";
  out << header_line << "\n";
  for (const auto& t : triplets) {
    out << t.row << "," << t.col << "," << format_double(t.value) << "\n";
  }
  file.commit();
}

std::vector<Triplet> read_triplet_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Triplet> out;
  std::string line;
  bool first_data_line = true;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (is_comment_or_empty(line)) continue;
    const auto fields = split_line(line);
    if (fields.size() != 3) throw IoError("expected 3 columns in " + path.string());
    if (first_data_line) {
      first_data_line = false;
      // Tolerate a header row.
      double probe = 0.0;
      const auto res = std::from_chars(fields[0].data(),
                                       fields[0].data() + fields[0].size(), probe);
      if (res.ec != std::errc()) continue;
    }
    Triplet t;
    t.row = static_cast<std::uint32_t>(parse_int(fields[0], path.string()));
    t.col = static_cast<std::uint32_t>(parse_int(fields[1], path.string()));
    t.value = parse_double(fields[2], path.string());
    out.push_back(t);
  }
  return out;
}

void write_text_atomic(const std::filesystem::path& path,
                       const std::string& content) {
  AtomicFile file(path);
  file.stream() << content;
  file.commit();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace deconf::io
