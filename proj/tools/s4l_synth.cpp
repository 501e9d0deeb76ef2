// Generates a small synthetic dataset bundle (target cube + ground truth,
// homogeneous source cube + ground truth, heterogeneous class-image pool)
// in the canonical container formats, for demos and quick experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>

#include "s4l/synthetic.hpp"

namespace fs = std::filesystem;
using namespace s4l;

int main(int argc, char** argv) {
  CLI::App app{"synthetic dataset generator"};
  std::string out_dir = "data/synth";
  uint64_t seed = 7;
  int64_t height = 48, width = 48, bands = 16;
  int classes = 3;
  int hetero_classes = 4, hetero_per_class = 40;
  int64_t homog_bands = 128;
  app.add_option("--out-dir", out_dir, "output directory");
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--height", height, "target cube height");
  app.add_option("--width", width, "target cube width");
  app.add_option("--bands", bands, "target cube bands");
  app.add_option("--classes", classes, "target classes");
  app.add_option("--homog-bands", homog_bands, "homogeneous cube bands");
  app.add_option("--hetero-classes", hetero_classes, "heterogeneous pool classes");
  app.add_option("--hetero-per-class", hetero_per_class, "images per class");
  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(out_dir);

    SyntheticSpec target;
    target.height = height;
    target.width = width;
    target.bands = bands;
    target.n_classes = classes;
    HsiCube cube = make_synthetic_cube(target, "target", derive_seed(seed, 1));
    GroundTruthMap gt = make_synthetic_gt(target, "target");
    save_cube(cube, (fs::path(out_dir) / "target.cube.json").string());
    save_gt(gt, (fs::path(out_dir) / "target.gt.json").string());

    SyntheticSpec homog;
    homog.height = 64;
    homog.width = 64;
    homog.bands = homog_bands;
    homog.n_classes = 8;
    HsiCube hcube = make_synthetic_cube(homog, "homog", derive_seed(seed, 2));
    GroundTruthMap hgt = make_synthetic_gt(homog, "homog");
    save_cube(hcube, (fs::path(out_dir) / "homog.cube.json").string());
    save_gt(hgt, (fs::path(out_dir) / "homog.gt.json").string());

    auto pool = make_synthetic_hetero_pool(hetero_classes, hetero_per_class,
                                           derive_seed(seed, 3));
    for (size_t c = 0; c < pool.size(); ++c) {
      fs::path cls_dir = fs::path(out_dir) / "hetero" /
                         ("class" + std::to_string(c));
      fs::create_directories(cls_dir);
      for (size_t i = 0; i < pool[c].size(); ++i) {
        HsiCube img;
        img.name = "img" + std::to_string(i);
        img.height = pool[c][i].size;
        img.width = pool[c][i].size;
        img.bands = 3;
        img.values = pool[c][i].window;
        save_cube(img, (cls_dir / ("img" + std::to_string(i) + ".cube.json")).string());
      }
    }
    std::printf("synthetic bundle written to %s\n", out_dir.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
