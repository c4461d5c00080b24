#include "datasets.hpp"

#include <cmath>
#include <stdexcept>

namespace selfe {

namespace {

oracle::GmmCond gmm_4class() {
  // Eight modes on a ring; class c owns the adjacent pair {2c, 2c+1}, so
  // every conditional is bimodal.
  oracle::GmmCond g;
  g.dim = 2;
  const double radius = 2.0, var = 0.0625;  // sd 0.25
  for (int c = 0; c < 4; ++c) {
    oracle::GmmClass cl;
    cl.weights = {0.5, 0.5};
    cl.means.resize(2, 2);
    for (int j = 0; j < 2; ++j) {
      double angle = (2 * c + j) * M_PI / 4.0;
      cl.means(j, 0) = radius * std::cos(angle);
      cl.means(j, 1) = radius * std::sin(angle);
    }
    cl.vars = {var, var};
    g.classes.push_back(cl);
    g.priors.push_back(0.25);
  }
  return g;
}

oracle::GmmCond checkerboard() {
  // 4x4 grid of unit cells over [-2, 2]^2; alternating cells belong to the
  // two classes, each cell approximated by one Gaussian at its center.
  oracle::GmmCond g;
  g.dim = 2;
  const double var = 0.09;  // sd 0.3 within a unit cell
  oracle::GmmClass cls[2];
  for (int r = 0; r < 4; ++r) {
    for (int cgrid = 0; cgrid < 4; ++cgrid) {
      int which = (r + cgrid) % 2;
      Eigen::Index row = cls[which].means.rows();
      cls[which].means.conservativeResize(row + 1, 2);
      cls[which].means(row, 0) = -1.5 + cgrid;
      cls[which].means(row, 1) = -1.5 + r;
      cls[which].weights.push_back(0.0);
      cls[which].vars.push_back(var);
    }
  }
  for (auto& cl : cls) {
    for (auto& w : cl.weights) w = 1.0 / static_cast<double>(cl.weights.size());
    g.classes.push_back(cl);
    g.priors.push_back(0.5);
  }
  return g;
}

oracle::GmmCond two_spirals() {
  // Beads along two interleaved Archimedean arms.
  oracle::GmmCond g;
  g.dim = 2;
  const int beads = 16;
  const double var = 0.0225;  // sd 0.15
  for (int arm = 0; arm < 2; ++arm) {
    oracle::GmmClass cl;
    cl.means.resize(beads, 2);
    for (int i = 0; i < beads; ++i) {
      double u = static_cast<double>(i) / (beads - 1);
      double r = 0.4 + 1.6 * u;
      double theta = 3.0 * M_PI * u + arm * M_PI;
      cl.means(i, 0) = r * std::cos(theta);
      cl.means(i, 1) = r * std::sin(theta);
      cl.weights.push_back(1.0 / beads);
      cl.vars.push_back(var);
    }
    g.classes.push_back(cl);
    g.priors.push_back(0.5);
  }
  return g;
}

}  // namespace

bool is_known_preset(const std::string& name) {
  return name == "gmm-4class" || name == "checkerboard" || name == "two-spirals";
}

oracle::GmmCond make_preset(const std::string& name) {
  oracle::GmmCond g;
  if (name == "gmm-4class") g = gmm_4class();
  else if (name == "checkerboard") g = checkerboard();
  else if (name == "two-spirals") g = two_spirals();
  else throw std::invalid_argument("unknown dataset preset: " + name);
  g.validate();
  return g;
}

}  // namespace selfe
