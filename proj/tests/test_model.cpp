#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "pnc/model.hpp"

using namespace pnc;

namespace {

ModelSpec chain_spec(int n, int nc, LayerKind kind, int nu = 2,
                     int categories = 2) {
  ModelSpec s;
  s.num_vars = n;
  s.num_components = nc;
  s.num_leaf_components = nc;
  s.num_categories = categories;
  s.nu = nu;
  s.kind = kind;
  return s;
}

}  // namespace

TEST_CASE("init_leaves marginalized variables contribute log 1") {
  Model m(chain_spec(4, 2, LayerKind::plain_sum));
  m.randomize(3);
  std::vector<int> vals{0, 0, 0, 0};
  std::vector<char> marg(4, 1);
  auto leaf = m.init_leaves(vals, marg);
  for (double x : leaf) CHECK(x == 0.0);
}

TEST_CASE("uniform categorical leaf gives log(1/256)") {
  auto spec = chain_spec(2, 2, LayerKind::plain_sum, 1, 256);
  Model m(spec);
  // zero logits softmax to the uniform distribution
  std::vector<char> marg(2, 0);
  auto leaf = m.init_leaves(std::vector<int>{7, 200}, marg);
  for (double x : leaf)
    CHECK(x == doctest::Approx(-5.545177).epsilon(1e-6));
}

TEST_CASE("leaf rejects out-of-range values") {
  Model m(chain_spec(2, 2, LayerKind::plain_sum));
  std::vector<char> marg(2, 0);
  CHECK_THROWS_AS(m.init_leaves(std::vector<int>{0, 2}, marg), Error);
  CHECK_THROWS_AS(m.init_leaves(std::vector<int>{-1, 0}, marg), Error);
}

TEST_CASE("two-input leaves hold v and 1-v with a floored log zero") {
  auto spec = chain_spec(2, 2, LayerKind::plain_sum, 1, 256);
  spec.leaf_mode = LeafMode::two_input_continuous;
  Model m(spec);
  std::vector<char> marg(2, 0);
  auto leaf = m.init_leaves(std::vector<int>{255, 51}, marg);
  CHECK(leaf[0] == doctest::Approx(0.0));                 // log 1
  CHECK(leaf[1] == numerics::kLogFloor);                  // log 0, floored
  const double v = 51.0 / 255.0;
  CHECK(leaf[2] == doctest::Approx(std::log(v)).epsilon(1e-12));
  CHECK(leaf[3] == doctest::Approx(std::log(1.0 - v)).epsilon(1e-12));
}

TEST_CASE("uniform model assigns log(1/256) to every 8-bit assignment") {
  Model m(chain_spec(8, 3, LayerKind::neural));
  // zero parameters: uniform leaves, uniform mixtures, zero kernels
  std::vector<char> marg(8, 0);
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    std::vector<int> vals(8);
    for (int& x : vals) x = static_cast<int>(rng.below(2));
    CHECK(m.forward(vals, marg) ==
          doctest::Approx(-8.0 * std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("single-variable circuit returns the leaf mixture") {
  auto spec = chain_spec(1, 1, LayerKind::plain_sum);
  spec.num_leaf_components = 1;
  Model m(spec);
  auto cat = m.params().view(m.params().index_of("leaf.cat"));
  cat[0] = std::log(0.3);
  cat[1] = std::log(0.7);
  std::vector<char> marg(1, 0);
  CHECK(m.forward(std::vector<int>{0}, marg) ==
        doctest::Approx(std::log(0.3)).epsilon(1e-12));
  CHECK(m.forward(std::vector<int>{1}, marg) ==
        doctest::Approx(std::log(0.7)).epsilon(1e-12));
}

TEST_CASE("full marginalization integrates to exactly zero") {
  for (auto kind :
       {LayerKind::plain_sum, LayerKind::quotient, LayerKind::neural}) {
    Model m(chain_spec(7, 3, kind));
    m.randomize(17, 1.0);
    std::vector<int> vals(7, 0);
    std::vector<char> marg(7, 1);
    CHECK(m.forward(vals, marg) == 0.0);
  }
  Model grid(ModelSpec{.two_d = true,
                       .height = 3,
                       .width = 4,
                       .num_components = 2,
                       .num_leaf_components = 2,
                       .kind = LayerKind::neural});
  grid.randomize(23, 1.0);
  std::vector<int> vals(12, 0);
  std::vector<char> marg(12, 1);
  CHECK(grid.forward(vals, marg) == 0.0);
}

TEST_CASE("zeroed kernels reproduce the uniform-weight plain model") {
  Model neural(chain_spec(8, 3, LayerKind::neural));
  Model plain(chain_spec(8, 3, LayerKind::plain_sum));
  neural.randomize(9, 0.8);
  plain.randomize(9, 0.8);
  // zero the weight networks; zero plain logits softmax to uniform
  for (const auto& info : neural.params().tensors())
    if (info.name.find(".k0.") != std::string::npos)
      for (double& x : neural.params().view(
               neural.params().index_of(info.name)))
        x = 0.0;
  for (const auto& info : plain.params().tensors())
    if (info.name.find(".w") != std::string::npos &&
        info.name.rfind("sum", 0) == 0)
      for (double& x : plain.params().view(plain.params().index_of(info.name)))
        x = 0.0;
  // align the shared banks
  for (const char* name : {"leaf.cat", "leaf.mix", "root.w"}) {
    auto src = neural.params().view(neural.params().index_of(name));
    auto dst = plain.params().view(plain.params().index_of(name));
    std::copy(src.begin(), src.end(), dst.begin());
  }
  Rng rng(31);
  std::vector<char> marg(8, 0);
  for (int t = 0; t < 200; ++t) {
    std::vector<int> vals(8);
    for (int& x : vals) x = static_cast<int>(rng.below(2));
    double a = neural.forward(vals, marg);
    double b = plain.forward(vals, marg);
    CHECK(std::abs(a - b) < 1e-12);
  }
}

TEST_CASE("nu=0 neural layer equals a plain layer fed by the bias") {
  auto nspec = chain_spec(4, 2, LayerKind::neural, 0);
  Model neural(nspec);
  neural.randomize(13, 0.5);
  Model plain(chain_spec(4, 2, LayerKind::plain_sum, 0));
  plain.randomize(13, 0.5);
  for (const char* name : {"leaf.cat", "leaf.mix", "root.w"}) {
    auto src = neural.params().view(neural.params().index_of(name));
    auto dst = plain.params().view(plain.params().index_of(name));
    std::copy(src.begin(), src.end(), dst.begin());
  }
  // with no taps every partition's logits equal the bias; replicate the bias
  // into the plain per-partition logit table
  for (const auto& info : neural.params().tensors()) {
    auto pos = info.name.find(".k0.b");
    if (pos == std::string::npos) continue;
    std::string layer = info.name.substr(0, pos);
    auto bias = neural.params().view(neural.params().index_of(info.name));
    auto w = plain.params().view(plain.params().index_of(layer + ".w"));
    for (size_t p = 0; p < w.size() / bias.size(); ++p)
      std::copy(bias.begin(), bias.end(), w.begin() + p * bias.size());
  }
  Rng rng(37);
  std::vector<char> marg(4, 0);
  for (int t = 0; t < 100; ++t) {
    std::vector<int> vals(4);
    for (int& x : vals) x = static_cast<int>(rng.below(2));
    CHECK(neural.forward(vals, marg) ==
          doctest::Approx(plain.forward(vals, marg)).epsilon(1e-12));
  }
}

TEST_CASE("quotient layer without predecessors equals the plain layer") {
  // nu=0 removes every preceding-partition product, so the quotient
  // denominator is one and the layer is an ordinary mixture
  Model quot(chain_spec(6, 3, LayerKind::quotient, 0));
  Model plain(chain_spec(6, 3, LayerKind::plain_sum, 0));
  quot.randomize(41, 1.0);
  auto src = quot.params().flat();
  auto dst = plain.params().flat();
  REQUIRE(src.size() == dst.size());
  std::copy(src.begin(), src.end(), dst.begin());
  Rng rng(43);
  std::vector<char> marg(6, 0);
  for (int t = 0; t < 100; ++t) {
    std::vector<int> vals(6);
    for (int& x : vals) x = static_cast<int>(rng.below(2));
    CHECK(quot.forward(vals, marg) ==
          doctest::Approx(plain.forward(vals, marg)).epsilon(1e-12));
  }
}

TEST_CASE("weight gradients of permanently masked taps are exactly zero") {
  // 4 variables, nu=3: the internal layer has 2 partitions, so taps at
  // offsets -2 and -3 never land in the grid
  auto spec = chain_spec(4, 2, LayerKind::neural, 3);
  Model m(spec);
  m.randomize(47, 1.0);
  std::vector<char> marg(4, 0);
  std::vector<int> vals{1, 0, 1, 1};
  EvalTrace trace;
  m.forward(vals, marg, 0, &trace);
  std::vector<double> grads(m.params().size(), 0.0);
  m.backward(trace, 1.0, grads);
  int idx = m.params().index_of("sum1.k0.w");
  REQUIRE(idx >= 0);
  const auto& info = m.params().tensors()[idx];
  // layout [tap][out][in]; taps 1 and 2 are the -2 / -3 offsets
  const size_t per_tap = info.size / 3;
  for (size_t i = info.offset + per_tap; i < info.offset + info.size; ++i)
    CHECK(grads[i] == 0.0);
  bool any = false;
  for (size_t i = info.offset; i < info.offset + per_tap; ++i)
    any = any || grads[i] != 0.0;
  CHECK(any);
}

TEST_CASE("identical seeds give identical parameters and outputs") {
  Model a(chain_spec(8, 3, LayerKind::neural));
  Model b(chain_spec(8, 3, LayerKind::neural));
  a.init_params(99);
  b.init_params(99);
  auto pa = a.params().flat(), pb = b.params().flat();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
  std::vector<char> marg(8, 0);
  std::vector<int> vals{0, 1, 1, 0, 1, 0, 0, 1};
  CHECK(a.forward(vals, marg) == b.forward(vals, marg));
}

TEST_CASE("per-class banks exist only for leaves and root") {
  auto spec = chain_spec(4, 2, LayerKind::neural);
  spec.num_classes = 3;
  Model m(spec);
  CHECK(m.params().index_of("class0.leaf.cat") >= 0);
  CHECK(m.params().index_of("class2.root.w") >= 0);
  CHECK(m.params().index_of("sum1.k0.w") >= 0);  // shared, unprefixed
  CHECK(m.params().index_of("class0.sum1.k0.w") < 0);
}

TEST_CASE("model spec validation") {
  auto bad = chain_spec(4, 2, LayerKind::neural);
  bad.num_classes = 0;
  CHECK_THROWS_AS(Model{bad}, Error);
  auto bad2 = chain_spec(4, 2, LayerKind::neural);
  bad2.weight_net_depth = 3;
  CHECK_THROWS_AS(Model{bad2}, Error);
  auto bad3 = chain_spec(4, 3, LayerKind::neural);
  bad3.leaf_mode = LeafMode::two_input_continuous;
  bad3.num_leaf_components = 3;
  CHECK_THROWS_AS(Model{bad3}, Error);
}
