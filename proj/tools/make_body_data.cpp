// Writes the shipped synthetic body and feature embedding files.
// Usage: make_body_data [out_dir]

#include <filesystem>
#include <iostream>

#include "dgtr/data_synth.hpp"

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "data";
  try {
    std::filesystem::create_directories(dir);
    dgtr::SyntheticBody::generate(20240501).save((dir / "synthetic_body.bin").string());
    dgtr::FeatureEmbedding::generate(20240502).save((dir / "feature_embedding.bin").string());
  } catch (const std::exception& e) {
    std::cerr << "make_body_data: " << e.what() << '\n';
    return 1;
  }
  std::cout << "wrote " << (dir / "synthetic_body.bin").string() << " and "
            << (dir / "feature_embedding.bin").string() << '\n';
  return 0;
}
