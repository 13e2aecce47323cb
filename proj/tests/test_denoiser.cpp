// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <functional>

#include "fddiff/denoiser.hpp"
#include "fddiff/diffusion.hpp"
#include "fddiff/errors.hpp"
#include "helpers.hpp"

using namespace fddiff;
using fddiff::nn::ParamStore;
using T3 = Tensor3<double>;

namespace {

T3 random_t3(int c, int h, int w, Rng& rng) {
  T3 t(c, h, w);
  fill_normal(t, rng);
  return t;
}

void randomize(ParamStore<double>& store, Rng& rng, double scale = 0.3) {
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& p : store.entries())
    for (auto& v : p.value) v = nd(rng);
}

double dot(const T3& a, const T3& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double rel_err(double a, double b) {
  const double den = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / den;
}

// Checks every parameter entry (or `stride`-sampled ones) and every input
// entry of a scalar objective against central differences.
void check_gradients(ParamStore<double>& store, T3& x, const std::function<double()>& objective,
                     const std::function<T3()>& analytic, double tol = 1e-6) {
  store.zero_grad();
  const T3 dx = analytic();
  const double h = 1e-6;
  for (auto& p : store.entries())
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + h;
      const double up = objective();
      p.value[i] = keep - h;
      const double dn = objective();
      p.value[i] = keep;
      const double num = (up - dn) / (2 * h);
      CHECK_MESSAGE(std::abs(num - p.grad[i]) <= tol * std::max(1.0, std::abs(num)), p.name, "[", i, "]");
    }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + h;
    const double up = objective();
    x.data[i] = keep - h;
    const double dn = objective();
    x.data[i] = keep;
    CHECK(std::abs((up - dn) / (2 * h) - dx.data[i]) <= tol * std::max(1.0, std::abs(dx.data[i])));
  }
}

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.p = 1;
  c.channels = {4, 4};
  c.time_embed_dim = 4;
  c.norm_groups = 2;
  c.timesteps = 16;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("denoiser") {
  TEST_CASE("conv2d gradients") {
    for (int k : {1, 3}) {
      Rng rng = make_rng(1, {std::uint64_t(k)});
      ParamStore<double> store;
      nn::Conv2d<double> conv(store, "c", 3, 2, k, rng);
      T3 x = random_t3(3, 4, 5, rng);
      const T3 r = random_t3(2, 4, 5, rng);
      check_gradients(
          store, x, [&] { return dot(conv.forward(x), r); },
          [&] {
            conv.forward(x);
            return conv.backward(r);
          });
    }
  }

  TEST_CASE("group norm gradients") {
    Rng rng = make_rng(2);
    ParamStore<double> store;
    nn::GroupNorm<double> gn(store, "g", 4, 2);
    randomize(store, rng);
    T3 x = random_t3(4, 3, 3, rng);
    const T3 r = random_t3(4, 3, 3, rng);
    check_gradients(
        store, x, [&] { return dot(gn.forward(x), r); },
        [&] {
          gn.forward(x);
          return gn.backward(r);
        });
  }

  TEST_CASE("attention gradients") {
    Rng rng = make_rng(3);
    ParamStore<double> store;
    nn::SelfAttention<double> attn(store, "a", 4, 2, rng);
    randomize(store, rng);
    T3 x = random_t3(4, 3, 2, rng);
    const T3 r = random_t3(4, 3, 2, rng);
    check_gradients(
        store, x, [&] { return dot(attn.forward(x), r); },
        [&] {
          attn.forward(x);
          return attn.backward(r);
        });
  }

  TEST_CASE("residual block gradients including the time embedding") {
    for (auto [in, out] : {std::pair{4, 4}, {2, 4}}) {
      Rng rng = make_rng(4, {std::uint64_t(in)});
      ParamStore<double> store;
      nn::ResBlock<double> block(store, "r", in, out, 3, 2, rng);
      randomize(store, rng);
      T3 x = random_t3(in, 4, 3, rng);
      Buffer<double> temb = {0.3, -0.7, 1.1};
      const T3 r = random_t3(out, 4, 3, rng);
      Buffer<double> dtemb;
      check_gradients(
          store, x, [&] { return dot(block.forward(x, temb), r); },
          [&] {
            block.forward(x, temb);
            dtemb.assign(temb.size(), 0.0);
            return block.backward(r, dtemb);
          });
      for (std::size_t i = 0; i < temb.size(); ++i) {
        const double keep = temb[i], h = 1e-6;
        temb[i] = keep + h;
        const double up = dot(block.forward(x, temb), r);
        temb[i] = keep - h;
        const double dn = dot(block.forward(x, temb), r);
        temb[i] = keep;
        CHECK(std::abs((up - dn) / (2 * h) - dtemb[i]) <= 1e-6);
      }
    }
  }

  TEST_CASE("whole network gradients at every stage") {
    DenoiserConfig cfg = tiny_config();
    cfg.p = 2;
    cfg.channels = {2, 4, 4};
    UNet<double> net(cfg);
    Rng rng = make_rng(5);
    randomize(net.params(), rng);
    const T3 y = random_t3(3, 2, 2, rng);
    for (int stage = 0; stage <= 2; ++stage) {
      const int size = 2 << stage;
      T3 latent = random_t3(3, size, size, rng);
      const T3 r1 = random_t3(3, size, size, rng), r2 = random_t3(3, size, size, rng);
      auto objective = [&] {
        const auto pred = net.forward(latent, y, 9, stage);
        return dot(pred.eps_hat, r1) + dot(pred.eta_hat, r2);
      };
      net.params().zero_grad();
      net.forward(latent, y, 9, stage);
      net.backward(r1, r2);
      const double h = 1e-6;
      for (auto& p : net.params().entries())
        for (std::size_t i = 0; i < p.size(); i += 3) {
          const double keep = p.value[i];
          p.value[i] = keep + h;
          const double up = objective();
          p.value[i] = keep - h;
          const double dn = objective();
          p.value[i] = keep;
          const double num = (up - dn) / (2 * h);
          CHECK_MESSAGE(std::abs(num - p.grad[i]) <= 1e-5 * std::max(1.0, std::abs(num)), p.name, "[", i, "] stage ",
                        stage);
        }
    }
  }

  TEST_CASE("training loss gradients on a tiny network") {
    DenoiserConfig cfg = tiny_config();
    cfg.channels = {2, 2};
    REQUIRE(parameter_count(cfg) <= 2000);
    UNet<double> net(cfg);
    Rng init = make_rng(6);
    randomize(net.params(), init);
    const ScheduleTable table({1, 16});
    const NoiseSchedule sched = alpha_schedule(16);
    std::vector<DegradationPyramid> pyrs;
    for (int i = 0; i < 2; ++i) pyrs.emplace_back(fddiff::test::random_image(3, 8, 8, 80 + i), table);
    const DegradationPyramid* batch[] = {&pyrs[0], &pyrs[1]};
    const std::span<const DegradationPyramid* const> span(batch);
    const Rng base = make_rng(7);
    LossConfig lc;
    lc.clip_weight = false;  // exercise the raw SNR weight too

    Rng r0 = base;
    net.params().zero_grad();
    const double loss = training_loss<double>(span, net, sched, lc, r0, true).loss;
    CHECK(std::isfinite(loss));
    CHECK(loss > 0);
    Rng pick = make_rng(8);
    int probes = 0;
    while (probes < 5) {
      auto& p = net.params().entries()[std::size_t(uniform_int(pick, 0, int(net.params().entries().size()) - 1))];
      const std::size_t i = std::size_t(uniform_int(pick, 0, int(p.size()) - 1));
      if (std::abs(p.grad[i]) < 1e-7) continue;
      const double keep = p.value[i], h = 1e-6;
      Rng ra = base, rb = base;
      p.value[i] = keep + h;
      const double up = training_loss<double>(span, net, sched, lc, ra, false).loss;
      p.value[i] = keep - h;
      const double dn = training_loss<double>(span, net, sched, lc, rb, false).loss;
      p.value[i] = keep;
      CHECK_MESSAGE(rel_err((up - dn) / (2 * h), p.grad[i]) <= 1e-3, p.name, "[", i, "]");
      ++probes;
    }
  }

  TEST_CASE("shapes, heads and stage routing") {
    DenoiserConfig cfg;
    cfg.p = 2;
    cfg.channels = {8, 8, 16};
    cfg.timesteps = 32;
    UNet<float> net(cfg);
    const Image y = fddiff::test::random_image(3, 4, 6, 90);
    for (int stage = 0; stage <= 2; ++stage) {
      const Image latent = fddiff::test::random_image(3, 4 << stage, 6 << stage, 91);
      const auto pred = net.forward(latent, y, 5, stage);
      CHECK(pred.eps_hat.same_shape(latent));
      CHECK(pred.eta_hat.same_shape(latent));
      for (const char* part : {"in.weight", "out.weight"})
        CHECK(net.params().find("stage" + std::to_string(stage) + "." + part) != nullptr);
    }
    // The output adapter emits 3 + 3 channels.
    const auto* out = net.params().find("stage0.out.weight");
    REQUIRE(out != nullptr);
    CHECK(out->shape[0] == 6);
    CHECK_THROWS_AS(net.forward(Image(3, 8, 8), y, 5, 1), ConsistencyError);
    CHECK_THROWS_AS(net.forward(Image(1, 8, 12), y, 5, 1), ConsistencyError);
    CHECK_THROWS_AS(net.forward(Image(3, 8, 12), y, 5, 3), ConsistencyError);
  }

  TEST_CASE("determinism and parameter count") {
    DenoiserConfig cfg;  // p = 1, channels [32, 64]
    const UNet<float> a(cfg), b(cfg);
    REQUIRE(a.params().entries().size() == b.params().entries().size());
    for (std::size_t k = 0; k < a.params().entries().size(); ++k)
      CHECK(a.params().entries()[k].value == b.params().entries()[k].value);
    CHECK(a.params().scalar_count() == parameter_count(cfg));
    CHECK(parameter_count(cfg) < 2000000);
    cfg.seed = 1;
    const UNet<float> c(cfg);
    bool differs = false;
    for (std::size_t k = 0; k < a.params().entries().size(); ++k)
      differs |= a.params().entries()[k].value != c.params().entries()[k].value;
    CHECK(differs);
  }

  TEST_CASE("float and double networks start from the same values") {
    const DenoiserConfig cfg = tiny_config();
    const UNet<float> f(cfg);
    const UNet<double> d(cfg);
    for (std::size_t k = 0; k < f.params().entries().size(); ++k)
      for (std::size_t i = 0; i < f.params().entries()[k].size(); ++i)
        CHECK(f.params().entries()[k].value[i] == float(d.params().entries()[k].value[i]));
  }

  TEST_CASE("timestep conditioning changes the output") {
    DenoiserConfig cfg;
    cfg.channels = {8, 16};
    UNet<float> net(cfg);
    // Output adapters start at zero; give them weights so the trunk is visible.
    Rng rng = make_rng(10);
    std::normal_distribution<double> nd(0.0, 0.2);
    for (auto& p : net.params().entries())
      for (auto& v : p.value)
        if (v == 0.0f && p.name.find("norm") == std::string::npos) v = float(nd(rng));
    const Image y = fddiff::test::random_image(3, 4, 4, 92);
    const Image latent = fddiff::test::random_image(3, 8, 8, 93);
    const auto a = net.forward(latent, y, 3, 1);
    const auto b = net.forward(latent, y, 40, 1);
    CHECK(fddiff::test::max_diff(a.eps_hat, b.eps_hat) > 1e-4);
    const auto a2 = net.forward(latent, y, 3, 1);
    CHECK(fddiff::test::max_diff(a.eps_hat, a2.eps_hat) == 0.0);
  }

  TEST_CASE("config validation") {
    DenoiserConfig c;
    c.channels = {32};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.channels = {32, 0};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.channels = {32, 64};
    c.attention_depths = {2};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.attention_depths = {};
    c.time_embed_dim = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}
