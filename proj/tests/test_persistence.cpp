#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pnc/persistence.hpp"

using namespace pnc;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string("/tmp/pnc_persist_test_") + name;
}

Config small_config(LayerKind kind = LayerKind::neural) {
  Config c;
  c.model.num_vars = 6;
  c.model.num_components = 3;
  c.model.num_leaf_components = 3;
  c.model.num_categories = 2;
  c.model.nu = 2;
  c.model.kind = kind;
  c.train.epochs = 2;
  c.train.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("empty config text yields all defaults") {
  auto c = parse_config_text("");
  CHECK(c.model.num_components == 2);
  CHECK(c.train.learning_rate == 0.001);
  CHECK(c.train.batch_size == 50);
  CHECK(c.train.epochs == 100);
  CHECK(c.train.val_fraction == 0.1);
  CHECK(c.model.kind == LayerKind::neural);
}

TEST_CASE("components key sets the component count") {
  auto c = parse_config_text("components = 12\n");
  CHECK(c.model.num_components == 12);
}

TEST_CASE("comments and blank lines are skipped") {
  auto c = parse_config_text("# a comment\n\ncomponents = 5 # trailing\n");
  CHECK(c.model.num_components == 5);
}

TEST_CASE("config constraint violations carry exit code 2") {
  auto probe = [](const std::string& text) {
    try {
      auto c = parse_config_text(text);
      c.validate();
      return 0;
    } catch (const Error& e) {
      return e.exit_code();
    }
  };
  CHECK(probe("nu = -1\n") == 2);
  CHECK(probe("unknown_key = 3\n") == 2);
  CHECK(probe("components = twelve\n") == 2);
  CHECK(probe("components = 3\ncomponents = 3\n") == 2);  // duplicate
  CHECK(probe("learning_rate = 0\nmode = 1d\nnum_vars = 4\n") == 2);
  CHECK(probe("mode = diagonal\n") == 2);
}

TEST_CASE("render and parse reach a fixed point") {
  auto c = small_config(LayerKind::quotient);
  c.train.learning_rate = 0.0025;
  c.images_path = "/data/images.idx";
  auto text = render_config(c);
  auto c2 = parse_config_text(text);
  CHECK(render_config(c2) == text);
  CHECK(c2.model.num_vars == 6);
  CHECK(c2.model.kind == LayerKind::quotient);
  CHECK(c2.train.learning_rate == 0.0025);
  CHECK(c2.images_path == "/data/images.idx");
}

TEST_CASE("checkpoint round-trips parameters bitwise") {
  auto config = small_config();
  Model m(config.model);
  m.randomize(99, 1.0);
  auto path = tmp_path("roundtrip.ckpt");
  save_checkpoint(m, config, nullptr, path);

  auto loaded = load_checkpoint(path);
  auto a = m.params().flat();
  auto b = loaded.model.params().flat();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(loaded.config.model.num_vars == 6);
  CHECK_FALSE(loaded.optimizer.has_value());
}

TEST_CASE("optimizer state round-trips") {
  auto config = small_config();
  Model m(config.model);
  m.init_params(1);
  AdamState st;
  st.m.assign(m.params().size(), 0.25);
  st.v.assign(m.params().size(), 0.5);
  st.step = 17;
  auto path = tmp_path("opt.ckpt");
  save_checkpoint(m, config, &st, path);
  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.optimizer.has_value());
  CHECK(loaded.optimizer->step == 17);
  CHECK(loaded.optimizer->m == st.m);
  CHECK(loaded.optimizer->v == st.v);
}

TEST_CASE("repeated saves are byte-identical") {
  auto config = small_config();
  Model m(config.model);
  m.init_params(3);
  auto p1 = tmp_path("dup1.ckpt"), p2 = tmp_path("dup2.ckpt");
  save_checkpoint(m, config, nullptr, p1);
  save_checkpoint(m, config, nullptr, p2);
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(!sa.empty());
  CHECK(sa == sb);
}

TEST_CASE("truncated checkpoints fail the checksum with no partial model") {
  auto config = small_config();
  Model m(config.model);
  m.init_params(5);
  auto path = tmp_path("trunc.ckpt");
  save_checkpoint(m, config, nullptr, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  bytes.resize(bytes.size() - 13);
  auto broken = tmp_path("trunc-broken.ckpt");
  std::ofstream out(broken, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  try {
    load_checkpoint(broken);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.exit_code() == 3);
  }
}

TEST_CASE("corrupted bytes fail the checksum") {
  auto config = small_config();
  Model m(config.model);
  m.init_params(5);
  auto path = tmp_path("flip.ckpt");
  save_checkpoint(m, config, nullptr, path);
  std::fstream io(path, std::ios::binary | std::ios::in | std::ios::out);
  io.seekp(60);
  char c;
  io.seekg(60);
  io.get(c);
  c ^= 0x40;
  io.seekp(60);
  io.put(c);
  io.close();
  CHECK_THROWS_AS(load_checkpoint(path), Error);
}

TEST_CASE("structure mismatch is refused by fingerprint") {
  auto config = small_config();
  config.model.num_components = 12;
  config.model.num_leaf_components = 12;
  Model big(config.model);
  big.init_params(1);
  auto path = tmp_path("mismatch.ckpt");
  save_checkpoint(big, config, nullptr, path);

  auto other = small_config();
  other.model.num_components = 8;
  other.model.num_leaf_components = 8;
  Model small(other.model);
  try {
    load_params_into(small, path);
    FAIL("expected a refusal");
  } catch (const Error& e) {
    CHECK(e.exit_code() == 3);
  }
}

TEST_CASE("load_params_into copies into a matching model") {
  auto config = small_config();
  Model m(config.model);
  m.randomize(77, 1.0);
  auto path = tmp_path("into.ckpt");
  save_checkpoint(m, config, nullptr, path);
  Model fresh(config.model);
  load_params_into(fresh, path);
  auto a = m.params().flat();
  auto b = fresh.params().flat();
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("garbage files are rejected as data errors") {
  auto path = tmp_path("garbage.ckpt");
  std::ofstream out(path, std::ios::binary);
  out << "definitely not a checkpoint";
  out.close();
  try {
    load_checkpoint(path);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.exit_code() == 3);
  }
  CHECK_THROWS_AS(load_checkpoint(tmp_path("does-not-exist.ckpt")), Error);
}
