#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ctbound/render_smooth.hpp"
#include "gradcheck.hpp"

using namespace ctbound;

namespace {

JunctionParams demo_params(int k = 1) {
  JunctionParams p;
  p.x0 = 1.3;
  p.y0 = -2.1;
  p.angles = {0.4, 2.0, 4.4};
  p.colors[0].assign(k, 0.15);
  p.colors[1].assign(k, 0.55);
  p.colors[2].assign(k, 0.9);
  return p;
}

}  // namespace

TEST_CASE("smooth render matches the scalar renderer forward") {
  const JunctionParams p = demo_params();
  const int R = 21;
  const double eps_b = 0.02, eps_d = 0.05;
  auto g = build_smooth_patch(params_tensor<double>(p), R, eps_b, eps_d);

  ScalarField ref_b = render_patch_boundary(p, R, eps_b);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < R; ++c)
      CHECK(g.boundary.data()[r * R + c] == doctest::Approx(ref_b.at(r, c)).epsilon(1e-6));

  for (int r = 0; r < R; ++r)
    for (int c = 0; c < R; ++c) {
      auto w = smooth_wedge_weights(patch_coord(c, R), patch_coord(r, R), p, eps_d);
      for (int j = 0; j < 3; ++j)
        CHECK(g.weights.data()[j * R * R + r * R + c] ==
              doctest::Approx(w[j]).epsilon(1e-6));
    }
}

TEST_CASE("angles are wrapped and sorted before use") {
  JunctionParams p = demo_params();
  // same junction with shuffled, shifted raw angles
  Tensor<double> raw(Shape{5}, {p.x0, p.y0, p.angles[2] - kTwoPi, p.angles[0] + kTwoPi,
                                p.angles[1]});
  auto g = build_smooth_patch(raw, 11, 0.02, 0.05);
  for (int j = 0; j < 3; ++j)
    CHECK(g.sorted_angles.data()[j] == doctest::Approx(p.angles[j]).epsilon(1e-12));
  ScalarField ref_b = render_patch_boundary(p, 11, 0.02);
  for (int i = 0; i < 121; ++i)
    CHECK(g.boundary.data()[i] == doctest::Approx(ref_b.values[i]).epsilon(1e-6));
}

TEST_CASE("edge masking") {
  const JunctionParams p = demo_params();
  const int R = 13;
  SUBCASE("no enabled edge gives a zero map") {
    auto g = build_smooth_patch(params_tensor<double>(p), R, 0.02, 0.05,
                                {false, false, false});
    for (double v : g.boundary.data()) CHECK(v == 0.0);
  }
  SUBCASE("single-edge map matches the masked scalar renderer") {
    for (int j = 0; j < 3; ++j) {
      std::array<bool, 3> mask{false, false, false};
      mask[j] = true;
      auto g = build_smooth_patch(params_tensor<double>(p), R, 0.02, 0.05, mask);
      ScalarField ref = render_patch_boundary_masked(p, R, mask, 0.02);
      for (int i = 0; i < R * R; ++i)
        CHECK(g.boundary.data()[i] == doctest::Approx(ref.values[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("smooth colors recover wedge means on a clean patch") {
  const JunctionParams p = demo_params();
  const int R = 21;
  ColorField clean = render_patch_color(p, R);
  auto g = build_smooth_patch(params_tensor<double>(p), R, 0.01, 0.005);
  Tensor<double> colors = smooth_wedge_colors(g, clean);
  REQUIRE(colors.shape() == Shape{3, 1});
  for (int j = 0; j < 3; ++j)
    CHECK(colors.data()[j] == doctest::Approx(p.colors[j][0]).epsilon(5e-3));

  SUBCASE("render from those colors reproduces the patch away from edges") {
    Tensor<double> render = smooth_color_render(g, colors);
    double worst_interior = 0.0;
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < R; ++c) {
        const double d = min_ray_distance(patch_coord(c, R), patch_coord(r, R), p);
        if (d < 1.0) continue;
        worst_interior = std::max(
            worst_interior, std::abs(render.data()[r * R + c] - clean.at(r, c, 0)));
      }
    CHECK(worst_interior < 5e-3);
  }
}

TEST_CASE("reconstruction loss is near zero at the truth and larger elsewhere") {
  const JunctionParams p = demo_params();
  ColorField clean = render_patch_color(p, 21);
  auto g = build_smooth_patch(params_tensor<double>(p), 21, 0.01, 0.01);
  const double at_truth = patch_reconstruction_loss(g, clean).item();
  CHECK(at_truth < 1e-3);

  JunctionParams q = p;
  q.x0 += 2.0;
  q.angles[1] += 0.5;
  auto gq = build_smooth_patch(params_tensor<double>(q), 21, 0.01, 0.01);
  CHECK(patch_reconstruction_loss(gq, clean).item() > 10 * at_truth + 1e-4);
}

TEST_CASE("gradients of the reconstruction loss pass finite differences") {
  const JunctionParams truth = demo_params();
  ColorField clean = render_patch_color(truth, 9);
  // probe slightly off the truth so gradients are non-trivial
  Tensor<double> params(Shape{5}, {1.05, -1.8, 0.55, 2.2, 4.25});
  params.set_requires_grad();
  auto res = gradcheck::check({params}, [&]() {
    auto g = build_smooth_patch(params, 9, 0.05, 0.08);
    return patch_reconstruction_loss(g, clean);
  });
  INFO("max rel err ", res.max_rel_err);
  CHECK(res.ok);
}

TEST_CASE("boundary-map gradients pass finite differences") {
  Tensor<double> params(Shape{5}, {0.4, 0.7, 0.9, 2.6, 4.9});
  params.set_requires_grad();
  auto res = gradcheck::check({params}, [&]() {
    auto g = build_smooth_patch(params, 7, 0.1, 0.1);
    return mean(square(g.boundary));
  });
  INFO("max rel err ", res.max_rel_err);
  CHECK(res.ok);
}

TEST_CASE("invalid configuration is rejected") {
  Tensor<double> p4(Shape{4}, 0.0);
  CHECK_THROWS_AS(build_smooth_patch(p4, 9, 0.01, 0.01), ConfigError);
  Tensor<double> p5(Shape{5}, 0.5);
  CHECK_THROWS_AS(build_smooth_patch(p5, 0, 0.01, 0.01), ConfigError);
  CHECK_THROWS_AS(build_smooth_patch(p5, 9, 0.0, 0.01), ConfigError);
  CHECK_THROWS_AS(build_smooth_patch(p5, 9, 0.01, -1.0), ConfigError);
}
