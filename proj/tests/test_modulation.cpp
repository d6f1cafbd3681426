#include <gtest/gtest.h>

#include "hyperinvert/modulation.hpp"

using namespace hyperinvert;

namespace {

Tensor<double> randn(Shape shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  rng.fill_normal(t, 0.0, scale);
  return t;
}

// Independent nested-loop reference for the full modulation pipeline.
Tensor<double> kernel_oracle(const Tensor<double>& theta, const Tensor<double>* delta,
                             const Tensor<double>& style, bool demod, double eps = 1e-8) {
  int64_t kh = theta.shape()[0], kw = theta.shape()[1], I = theta.shape()[2],
          O = theta.shape()[3];
  int64_t N = style.shape()[0];
  Tensor<double> out(Shape{N, kh, kw, I, O});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t y = 0; y < kh; ++y)
      for (int64_t x = 0; x < kw; ++x)
        for (int64_t i = 0; i < I; ++i)
          for (int64_t o = 0; o < O; ++o) {
            double w = theta[((y * kw + x) * I + i) * O + o];
            if (delta) {
              const Shape& ds = delta->shape();
              int64_t dn = ds[0] == 1 ? 0 : n;
              int64_t dy = ds[1] == 1 ? 0 : y;
              int64_t dx = ds[2] == 1 ? 0 : x;
              double dv = (*delta)[(((dn * ds[1] + dy) * ds[2] + dx) * ds[3] + i) * ds[4] + o];
              w *= 1.0 + dv;
            }
            w *= style[n * I + i];
            out[(((n * kh + y) * kw + x) * I + i) * O + o] = w;
          }
  if (demod) {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t o = 0; o < O; ++o) {
        double ss = 0;
        for (int64_t y = 0; y < kh; ++y)
          for (int64_t x = 0; x < kw; ++x)
            for (int64_t i = 0; i < I; ++i) {
              double w = out[(((n * kh + y) * kw + x) * I + i) * O + o];
              ss += w * w;
            }
        double d = 1.0 / std::sqrt(ss + eps);
        for (int64_t y = 0; y < kh; ++y)
          for (int64_t x = 0; x < kw; ++x)
            for (int64_t i = 0; i < I; ++i)
              out[(((n * kh + y) * kw + x) * I + i) * O + o] *= d;
      }
  }
  return out;
}

}  // namespace

TEST(Modulation, ModulateWeightsOracle) {
  Tensor<double> theta = randn(Shape{3, 3, 4, 5}, 1);
  Tensor<double> delta = randn(Shape{1, 1, 1, 4, 5}, 2, 0.3);
  Tensor<double> got = modulate_weights(theta.reshaped(Shape{1, 3, 3, 4, 5}), delta);
  for (int64_t y = 0; y < 3; ++y)
    for (int64_t x = 0; x < 3; ++x)
      for (int64_t i = 0; i < 4; ++i)
        for (int64_t o = 0; o < 5; ++o) {
          double want = theta[((y * 3 + x) * 4 + i) * 5 + o] * (1.0 + delta[i * 5 + o]);
          EXPECT_DOUBLE_EQ(got[((y * 3 + x) * 4 + i) * 5 + o], want);
        }
}

TEST(Modulation, StyledKernelMatchesNestedLoopOracle) {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Tensor<double> theta = randn(Shape{3, 3, 6, 4}, 100 + trial);
    Tensor<double> style = randn(Shape{3, 6}, 200 + trial);
    Tensor<double> delta = randn(Shape{3, 1, 1, 6, 4}, 300 + trial, 0.4);
    Tensor<double> got = styled_demodulated_kernel(theta, &delta, style, true);
    Tensor<double> want = kernel_oracle(theta, &delta, style, true);
    EXPECT_LT(max_abs_diff(got, want), 1e-12) << "trial " << trial;
    Tensor<double> got_nd = styled_demodulated_kernel(theta, &delta, style, false);
    Tensor<double> want_nd = kernel_oracle(theta, &delta, style, false);
    EXPECT_LT(max_abs_diff(got_nd, want_nd), 1e-12) << "trial " << trial;
  }
}

TEST(Modulation, DemodulatedKernelHasUnitNorm) {
  Tensor<double> theta = randn(Shape{3, 3, 8, 8}, 7);
  Tensor<double> style = randn(Shape{2, 8}, 8);
  Tensor<double> k = styled_demodulated_kernel<double>(theta, nullptr, style, true);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t o = 0; o < 8; ++o) {
      double ss = 0;
      for (int64_t s = 0; s < 9; ++s)
        for (int64_t i = 0; i < 8; ++i) ss += k[((n * 9 + s) * 8 + i) * 8 + o] * k[((n * 9 + s) * 8 + i) * 8 + o];
      EXPECT_NEAR(ss, 1.0, 1e-6);
    }
}

TEST(Modulation, AccumulateSumsDeltas) {
  Tensor<double> a = randn(Shape{1, 1, 1, 3, 3}, 11, 0.2);
  Tensor<double> b = randn(Shape{1, 1, 1, 3, 3}, 12, 0.2);
  OffsetMap<double> s1, s2;
  s1.emplace(3, Var<double>::constant(a));
  s2.emplace(3, Var<double>::constant(b));
  OffsetMap<double> acc = accumulate_offsets<double>({s1, s2});
  ASSERT_EQ(acc.size(), 1u);
  Tensor<double> want = tensor_add(a, b);
  EXPECT_EQ(max_abs_diff(acc.at(3).value(), want), 0.0);

  OffsetMap<double> missing;
  missing.emplace(4, Var<double>::constant(a));
  EXPECT_THROW(accumulate_offsets<double>({s1, missing}), ConfigError);
}

TEST(Modulation, AccumulatedEqualsComposedRefinement) {
  // Applying the summed delta once must equal baking the sum into the
  // kernel and synthesizing without offsets.
  Generator<float> g(toy_spec(16, 8), 17);
  g.set_params_requires_grad(false);
  Rng rng(18);
  Tensor<float> z = g.sample_latents(1, rng);

  OffsetTensors<float> d1, d2;
  Rng orng(19);
  for (int idx : select_refined_layers(g.spec(), RefinementPolicy::MediumFineConv)) {
    const LayerSpec& l = g.spec().layer(idx);
    Tensor<float> a(Shape{1, 1, 1, l.c_in, l.c_out});
    Tensor<float> b(Shape{1, 1, 1, l.c_in, l.c_out});
    orng.fill_normal(a, 0.0, 0.1);
    orng.fill_normal(b, 0.0, 0.1);
    d1.emplace(idx, std::move(a));
    d2.emplace(idx, std::move(b));
  }
  OffsetTensors<float> acc = accumulate_offset_tensors<float>({d1, d2});
  OffsetMap<float> acc_vars = offsets_as_constants(acc);
  Tensor<float> via_offsets = g.generate(z, &acc_vars);

  Generator<float> baked = g.clone();
  apply_offsets_to_generator(baked, acc);
  Tensor<float> via_transfer = baked.generate(z);
  EXPECT_LT(max_abs_diff(via_offsets, via_transfer), 1e-5f);
}

TEST(Modulation, SliceSampleOffsets) {
  Tensor<double> d = randn(Shape{3, 1, 1, 2, 2}, 21);
  OffsetTensors<double> offs;
  offs.emplace(5, d);
  OffsetTensors<double> s1 = slice_sample_offsets(offs, 1);
  ASSERT_EQ(s1.at(5).shape(), (Shape{1, 1, 1, 2, 2}));
  for (int64_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s1.at(5)[i], d[4 + i]);
  EXPECT_THROW(slice_sample_offsets(offs, 3), ShapeError);
}

TEST(Modulation, OffsetDirRoundTrip) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "hi_offsets";
  fs::remove_all(dir);
  OffsetTensors<float> offs;
  Rng rng(22);
  Tensor<float> a(Shape{1, 1, 1, 4, 4});
  Tensor<float> b(Shape{1, 3, 3, 4, 4});
  rng.fill_normal(a);
  rng.fill_normal(b);
  offs.emplace(3, a);
  offs.emplace(4, b);
  save_offsets(dir, offs);
  EXPECT_TRUE(fs::exists(dir / "layers.json"));
  OffsetTensors<float> back = load_offsets<float>(dir);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(max_abs_diff(back.at(3), a), 0.0f);
  EXPECT_EQ(max_abs_diff(back.at(4), b), 0.0f);
  fs::remove_all(dir);
}
