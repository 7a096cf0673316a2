#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "brainmclip/core/error.hpp"
#include "brainmclip/data/mat1.hpp"
#include "brainmclip/data/synth.hpp"
#include "brainmclip/model/checkpoint.hpp"

namespace brainmclip {

/*
 * Dataset directory:
 *   voxels.mat1                 n x N_D
 *   mask.txt                    one `low` / `high` per voxel
 *   layers/layer_<id>.mat1      n x (m_img * d_img)
 *   captions/<i>/<j>.mat1       m_text x d_text
 *   meta.txt                    key=value
 */
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "layers");
  fs::create_directories(dir / "captions");
  save_matrix(ds.voxels, dir / "voxels.mat1");
  {
    std::ofstream f(dir / "mask.txt", std::ios::trunc);
    for (Region r : ds.mask.labels()) f << (r == Region::low_level ? "low" : "high") << '\n';
  }
  std::string ids;
  for (std::size_t k = 0; k < ds.layers.size(); ++k) {
    const int id = ds.layers.ids()[k];
    save_matrix(ds.layers.layer(k), dir / "layers" / ("layer_" + std::to_string(id) + ".mat1"));
    ids += (k ? "," : "") + std::to_string(id);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const fs::path sub = dir / "captions" / std::to_string(i);
    fs::create_directories(sub);
    for (std::size_t j = 0; j < ds.captions[i].size(); ++j) save_matrix(ds.captions[i][j], sub / (std::to_string(j) + ".mat1"));
  }
  std::ofstream f(dir / "meta.txt", std::ios::trunc);
  f << "n_train=" << ds.n_train << '\n'
    << "n_test=" << ds.n_test << '\n'
    << "n_det=" << ds.mask.n_det() << '\n'
    << "n_sem=" << ds.mask.n_sem() << '\n'
    << "m_text=" << ds.m_text << '\n'
    << "d_text=" << ds.d_text << '\n'
    << "m_img=" << ds.m_img << '\n'
    << "d_img=" << ds.d_img << '\n'
    << "layer_ids=" << ids << '\n'
    << "seed=" << ds.seed << '\n';
}

/**
 * Applies a d_in x d_out projection to every token of every layer. Used when
 * stored layer features are wider than the shared embedding width.
 */
inline LayerStack project_layers(const LayerStack& stack, std::size_t tokens, const Matrix& projection) {
  if (tokens == 0 || stack.width() % tokens != 0 || stack.width() / tokens != projection.rows()) {
    throw ShapeMismatch("project_layers: layer width " + std::to_string(stack.width()) + " is not tokens x " +
                        std::to_string(projection.rows()));
  }
  std::vector<Matrix> out;
  for (const auto& layer : stack.layers()) {
    const Matrix as_tokens = layer.reshaped(layer.rows() * tokens, projection.rows());
    out.push_back(matmul(as_tokens, projection).reshaped(layer.rows(), tokens * projection.cols()));
  }
  return LayerStack(stack.ids(), std::move(out));
}

/// Loads a dataset directory. A non-empty projection path maps layer tokens to the embedding width at load time.
inline Dataset load_dataset(const std::filesystem::path& dir, const std::filesystem::path& projection = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw UsageError("dataset directory not found: " + dir.string());
  const auto meta = detail::read_key_values(dir / "meta.txt");
  auto get = [&](const char* key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw UsageError((dir / "meta.txt").string() + ": missing key " + key);
    return it->second;
  };
  Dataset ds;
  ds.n_train = std::stoull(get("n_train"));
  ds.n_test = std::stoull(get("n_test"));
  ds.m_text = std::stoull(get("m_text"));
  ds.d_text = std::stoull(get("d_text"));
  ds.m_img = std::stoull(get("m_img"));
  ds.d_img = std::stoull(get("d_img"));
  ds.seed = std::stoull(get("seed"));

  std::vector<Region> labels;
  {
    std::ifstream f(dir / "mask.txt");
    if (!f) throw UsageError("cannot open " + (dir / "mask.txt").string());
    std::string line;
    while (std::getline(f, line)) {
      if (line == "low") labels.push_back(Region::low_level);
      else if (line == "high") labels.push_back(Region::high_level);
      else if (!line.empty()) throw UsageError((dir / "mask.txt").string() + ": bad label '" + line + "'");
    }
  }
  ds.mask = RegionMask(std::move(labels));
  ds.voxels = load_matrix(dir / "voxels.mat1");
  const std::size_t n = ds.size();
  if (ds.voxels.rows() != n || ds.voxels.cols() != ds.mask.n_det()) {
    throw ShapeMismatch("voxels.mat1 is " + Matrix::shape_string(ds.voxels) + ", expected " + std::to_string(n) + "x" +
                        std::to_string(ds.mask.n_det()));
  }

  std::vector<int> ids;
  std::vector<Matrix> layers;
  {
    std::string list = get("layer_ids");
    std::size_t pos = 0;
    while (pos <= list.size()) {
      const auto comma = list.find(',', pos);
      ids.push_back(std::stoi(list.substr(pos, comma - pos)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  for (int id : ids) {
    Matrix l = load_matrix(dir / "layers" / ("layer_" + std::to_string(id) + ".mat1"));
    if (l.rows() != n) throw ShapeMismatch("layer " + std::to_string(id) + " has " + std::to_string(l.rows()) + " rows");
    layers.push_back(std::move(l));
  }
  ds.layers = LayerStack(std::move(ids), std::move(layers));
  if (!projection.empty()) ds.layers = project_layers(ds.layers, ds.m_img, load_matrix(projection));
  if (ds.layers.width() != ds.m_img * ds.d_img) {
    throw ShapeMismatch("layer width " + std::to_string(ds.layers.width()) + " != m_img * d_img");
  }

  ds.captions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const fs::path sub = dir / "captions" / std::to_string(i);
    for (std::size_t j = 0;; ++j) {
      const fs::path file = sub / (std::to_string(j) + ".mat1");
      if (!fs::exists(file)) break;
      Matrix c = load_matrix(file);
      if (c.rows() != ds.m_text || c.cols() != ds.d_text) {
        throw ShapeMismatch(file.string() + " is " + Matrix::shape_string(c) + ", expected m_text x d_text");
      }
      ds.captions[i].push_back(std::move(c));
    }
    if (ds.captions[i].empty()) throw UsageError("stimulus " + std::to_string(i) + " has no captions in " + sub.string());
  }
  return ds;
}

}  // namespace brainmclip
