#pragma once

// Binary "AFW1" matrix files and a small CSV reader.
//
// Layout: 4 bytes "AFW1", u32 rows, u32 cols, rows*cols f64, all little-endian,
// entries row-major.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "afw/linalg.hpp"

namespace afw {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T)))
    throw FormatError("matrix file truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

inline constexpr std::array<char, 4> kMatrixMagic{'A', 'F', 'W', '1'};

inline void write_matrix(std::ostream& os, const DenseMatrix& m) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
      m.cols() > std::numeric_limits<std::uint32_t>::max())
    throw FormatError("matrix too large for AFW1");
  os.write(kMatrixMagic.data(), kMatrixMagic.size());
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  for (double x : m.data()) detail::write_le<double>(os, x);
  if (!os) throw FormatError("failed writing matrix");
}

inline DenseMatrix read_matrix(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMatrixMagic)
    throw FormatError("bad magic: not an AFW1 matrix");
  const auto rows = detail::read_le<std::uint32_t>(is);
  const auto cols = detail::read_le<std::uint32_t>(is);
  if (rows == 0 || cols == 0) throw FormatError("AFW1 matrix with zero dimension");
  std::vector<double> entries(static_cast<std::size_t>(rows) * cols);
  for (double& x : entries) x = detail::read_le<double>(is);
  return DenseMatrix(rows, cols, std::move(entries));
}

inline void save_matrix(const std::filesystem::path& path, const DenseMatrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_matrix(os, m);
}

inline DenseMatrix load_matrix(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_matrix(is);
}

/// Comma-separated rows; blank lines and lines starting with '#' are skipped.
inline DenseMatrix read_matrix_csv(std::istream& is) {
  std::vector<double> entries;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        entries.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw FormatError("CSV: bad number '" + cell + "' on row " + std::to_string(rows + 1));
      }
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw FormatError("CSV: ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows == 0 || cols == 0) throw FormatError("CSV: no data");
  return DenseMatrix(rows, cols, std::move(entries));
}

inline DenseMatrix load_matrix_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_matrix_csv(is);
}

}  // namespace afw
