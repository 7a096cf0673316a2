#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "brainmclip/core/error.hpp"
#include "brainmclip/data/mat1.hpp"
#include "brainmclip/model/params.hpp"

namespace brainmclip {

namespace detail {

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path.string() + ": malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace detail

/**
 * Writes one MAT1 file per tensor, `manifest.txt` (`name=file rows cols`,
 * sorted by tensor name) and `model.txt` holding the dimensions and variant.
 */
inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> lines;
  for_each_tensor(p, [&](const std::string& name, const Matrix& m) {
    const std::string file = name + ".mat1";
    save_matrix(m, dir / file);
    lines.push_back(name + "=" + file + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()));
  });
  std::sort(lines.begin(), lines.end());
  {
    std::ofstream f(dir / "manifest.txt", std::ios::trunc);
    for (const auto& l : lines) f << l << '\n';
  }
  const auto& c = p.config;
  std::ofstream f(dir / "model.txt", std::ios::trunc);
  f << "variant=" << to_string(p.variant) << '\n'
    << "n_sem=" << c.n_sem << '\n'
    << "n_det=" << c.n_det << '\n'
    << "latent_dim=" << c.latent_dim << '\n'
    << "m_text=" << c.m_text << '\n'
    << "d_text=" << c.d_text << '\n'
    << "m_img=" << c.m_img << '\n'
    << "d_img=" << c.d_img << '\n';
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", c.dropout_codec);
  f << "dropout_codec=" << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", c.dropout_backbone);
  f << "dropout_backbone=" << buf << '\n';
}

inline ModelParams load_checkpoint(const std::filesystem::path& dir) {
  const auto kv = detail::read_key_values(dir / "model.txt");
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw UsageError((dir / "model.txt").string() + ": missing key " + key);
    return it->second;
  };
  ModelConfig c;
  c.n_sem = std::stoull(get("n_sem"));
  c.n_det = std::stoull(get("n_det"));
  c.latent_dim = std::stoull(get("latent_dim"));
  c.m_text = std::stoull(get("m_text"));
  c.d_text = std::stoull(get("d_text"));
  c.m_img = std::stoull(get("m_img"));
  c.d_img = std::stoull(get("d_img"));
  c.dropout_codec = std::stod(get("dropout_codec"));
  c.dropout_backbone = std::stod(get("dropout_backbone"));
  ModelParams p = zero_params(c, variant_from_string(get("variant")));

  const auto manifest = detail::read_key_values(dir / "manifest.txt");
  for_each_tensor(p, [&](const std::string& name, Matrix& m) {
    auto it = manifest.find(name);
    if (it == manifest.end()) throw UsageError("checkpoint " + dir.string() + " lacks tensor " + name);
    std::istringstream fields(it->second);
    std::string file;
    std::size_t rows = 0, cols = 0;
    fields >> file >> rows >> cols;
    Matrix loaded = load_matrix(dir / file);
    if (loaded.rows() != rows || loaded.cols() != cols || !loaded.same_shape(m)) {
      throw ShapeMismatch("checkpoint tensor " + name + ": expected " + Matrix::shape_string(m) + ", file holds " +
                          Matrix::shape_string(loaded));
    }
    m = std::move(loaded);
  });
  return p;
}

}  // namespace brainmclip
