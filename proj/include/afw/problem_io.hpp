#pragma once

// Problem directories: meta.json plus AFW1 matrix files.
//
//   matrix sensing: sensing.afw (N × D1·D2, row i is vec(A_i)), responses.afw
//                   (N × 1), ground_truth.afw (D1 × D2)
//   pnn:            features.afw (N × d), labels.afw (N × 1)

#include <filesystem>
#include <fstream>
#include <string>
#include <variant>

#include <json.hpp>

#include "afw/matrix_io.hpp"
#include "afw/objectives.hpp"

namespace afw {

inline constexpr int kProblemFormatVersion = 1;

namespace detail {

inline DenseMatrix column(const std::vector<double>& v) { return DenseMatrix(v.size(), 1, v); }

inline std::vector<double> as_vector(const DenseMatrix& m) { return {m.data().begin(), m.data().end()}; }

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace detail

inline void save_problem(const std::filesystem::path& dir, const MatrixSensingProblem& p) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta{{"format_version", kProblemFormatVersion},
                      {"kind", "matrix_sensing"},
                      {"d1", p.d1},
                      {"d2", p.d2},
                      {"rank", p.rank},
                      {"samples", p.sample_count()},
                      {"noise_std", p.noise_std},
                      {"theta", p.theta},
                      {"seed", p.seed}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  save_matrix(dir / "sensing.afw", DenseMatrix(p.sample_count(), p.d1 * p.d2, p.sensing));
  save_matrix(dir / "responses.afw", detail::column(p.responses));
  save_matrix(dir / "ground_truth.afw", p.ground_truth);
}

inline void save_problem(const std::filesystem::path& dir, const PnnProblem& p) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta{{"format_version", kProblemFormatVersion},
                      {"kind", "pnn"},
                      {"dim", p.dim},
                      {"samples", p.sample_count()},
                      {"theta", p.theta},
                      {"seed", p.seed}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  save_matrix(dir / "features.afw", DenseMatrix(p.sample_count(), p.dim, p.features));
  save_matrix(dir / "labels.afw", detail::column(p.labels));
}

inline void save_problem(const std::filesystem::path& dir, const Problem& p) {
  std::visit([&](const auto& q) { save_problem(dir, q); }, p);
}

inline Problem load_problem(const std::filesystem::path& dir) {
  const auto meta = detail::read_json(dir / "meta.json");
  try {
    if (meta.at("format_version").get<int>() != kProblemFormatVersion)
      throw FormatError("unsupported problem format version");
    const auto kind = meta.at("kind").get<std::string>();
    if (kind == "matrix_sensing") {
      MatrixSensingProblem p;
      p.d1 = meta.at("d1").get<std::size_t>();
      p.d2 = meta.at("d2").get<std::size_t>();
      p.rank = meta.at("rank").get<std::size_t>();
      p.noise_std = meta.at("noise_std").get<double>();
      p.theta = meta.at("theta").get<double>();
      p.seed = meta.at("seed").get<std::uint64_t>();
      const auto sensing = load_matrix(dir / "sensing.afw");
      const auto responses = load_matrix(dir / "responses.afw");
      p.ground_truth = load_matrix(dir / "ground_truth.afw");
      const auto n = meta.at("samples").get<std::size_t>();
      if (sensing.rows() != n || sensing.cols() != p.d1 * p.d2 || responses.rows() != n || responses.cols() != 1 ||
          p.ground_truth.rows() != p.d1 || p.ground_truth.cols() != p.d2)
        throw FormatError("problem files disagree with meta.json");
      p.sensing = detail::as_vector(sensing);
      p.responses = detail::as_vector(responses);
      return p;
    }
    if (kind == "pnn") {
      PnnProblem p;
      p.dim = meta.at("dim").get<std::size_t>();
      p.theta = meta.at("theta").get<double>();
      p.seed = meta.at("seed").get<std::uint64_t>();
      const auto features = load_matrix(dir / "features.afw");
      const auto labels = load_matrix(dir / "labels.afw");
      const auto n = meta.at("samples").get<std::size_t>();
      if (features.rows() != n || features.cols() != p.dim || labels.rows() != n || labels.cols() != 1)
        throw FormatError("problem files disagree with meta.json");
      p.features = detail::as_vector(features);
      p.labels = detail::as_vector(labels);
      return p;
    }
    throw FormatError("unknown problem kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("meta.json: ") + e.what());
  }
}

}  // namespace afw
