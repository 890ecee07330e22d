#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmfuse/adam.hpp"
#include "mmfuse/objectives.hpp"
#include "mmfuse/params.hpp"

using namespace mmfuse;

namespace {

ParamStore<double> single_param(double x0) {
  ParamStore<double> store;
  store.add("x", Tensor<double>::scalar(x0));
  return store;
}

}  // namespace

TEST_CASE("zero gradient leaves parameters unchanged, advances the step") {
  ParamStore<double> store = single_param(1.25);
  AdamState<double> state = AdamState<double>::zeros_like(store);
  std::vector<Tensor<double>> grads = {Tensor<double>::scalar(0.0)};
  adam_step(store, grads, state, 0.01);
  CHECK(store[0].data[0] == doctest::Approx(1.25));
  CHECK(state.step == 1);
}

TEST_CASE("bias-corrected first step has magnitude about lr") {
  ParamStore<double> store = single_param(0.0);
  AdamState<double> state = AdamState<double>::zeros_like(store);
  std::vector<Tensor<double>> grads = {Tensor<double>::scalar(0.73)};
  adam_step(store, grads, state, 0.01);
  CHECK(store[0].data[0] == doctest::Approx(-0.01).epsilon(1e-4));
}

TEST_CASE("1-D quadratic reaches |x| < 1e-3 within 500 steps at lr 0.01") {
  ParamStore<double> store = single_param(1.0);
  AdamState<double> state = AdamState<double>::zeros_like(store);
  for (int t = 0; t < 500; ++t) {
    std::vector<Tensor<double>> grads = {
        Tensor<double>::scalar(2.0 * store[0].data[0])};
    adam_step(store, grads, state, 0.01);
  }
  CHECK(std::abs(store[0].data[0]) < 1e-3);
}

TEST_CASE("non-finite gradient aborts and names the parameter") {
  ParamStore<double> store;
  store.add("layer0.ffn.w1", Tensor<double>::scalar(1.0));
  AdamState<double> state = AdamState<double>::zeros_like(store);
  std::vector<Tensor<double>> grads = {
      Tensor<double>::scalar(std::numeric_limits<double>::quiet_NaN())};
  CHECK_THROWS_WITH_AS(adam_step(store, grads, state, 0.01),
                       doctest::Contains("layer0.ffn.w1"), NumericError);
  CHECK(store[0].data[0] == doctest::Approx(1.0));
  CHECK(state.step == 0);
}

TEST_CASE("global-norm clipping") {
  std::vector<Tensor<double>> grads = {Tensor<double>({1, 2}, {3.0, 4.0})};
  const double norm = clip_global_norm(grads, 1.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(grads[0].data[0] == doctest::Approx(0.6));
  CHECK(grads[0].data[1] == doctest::Approx(0.8));
  // under the cap: untouched
  std::vector<Tensor<double>> small = {Tensor<double>({1, 1}, {0.5})};
  clip_global_norm(small, 1.0);
  CHECK(small[0].data[0] == doctest::Approx(0.5));
}

TEST_CASE("lr schedule: linear warmup, exact peak, inverse-sqrt decay") {
  const double peak = 5e-5;
  CHECK(lr_schedule(500, peak, 500) == peak);  // exact
  CHECK(lr_schedule(250, peak, 500) == doctest::Approx(2.5e-5));
  CHECK(lr_schedule(2000, peak, 500) == doctest::Approx(2.5e-5));
  CHECK_THROWS_AS(lr_schedule(0, peak, 500), ContractError);
  CHECK_THROWS_AS(lr_schedule(1, peak, 0), ConfigError);
  // continuous at the peak, strictly decreasing after
  const double before = lr_schedule(499, peak, 500);
  const double at = lr_schedule(500, peak, 500);
  const double after = lr_schedule(501, peak, 500);
  CHECK(before < at);
  CHECK(after < at);
  CHECK(std::abs(at - before) < peak * 0.01);
  double prev = at;
  for (int64_t s = 501; s < 600; ++s) {
    const double cur = lr_schedule(s, peak, 500);
    CHECK(cur < prev);
    prev = cur;
  }
}
