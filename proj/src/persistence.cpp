#include "pnc/persistence.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>
#include <vector>

namespace pnc {

namespace {

constexpr char kMagic[4] = {'P', 'N', 'C', '1'};
constexpr uint32_t kVersion = 1;

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct KeyValue {
  std::string value;
  int line = 0;
};

[[noreturn]] void config_error(int line, const std::string& msg) {
  fail(ErrorKind::config, "config line " + std::to_string(line) + ": " + msg);
}

int parse_int(const KeyValue& kv, const std::string& key) {
  try {
    size_t pos = 0;
    int v = std::stoi(kv.value, &pos);
    if (pos != kv.value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    config_error(kv.line, key + " expects an integer, got '" + kv.value + "'");
  }
}

double parse_double(const KeyValue& kv, const std::string& key) {
  try {
    size_t pos = 0;
    double v = std::stod(kv.value, &pos);
    if (pos != kv.value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    config_error(kv.line, key + " expects a number, got '" + kv.value + "'");
  }
}

uint64_t parse_u64(const KeyValue& kv, const std::string& key) {
  try {
    size_t pos = 0;
    uint64_t v = std::stoull(kv.value, &pos);
    if (pos != kv.value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    config_error(kv.line,
                 key + " expects an unsigned integer, got '" + kv.value + "'");
  }
}

}  // namespace

void Config::validate() const {
  if (model.two_d)
    require(model.height >= 1 && model.width >= 1, ErrorKind::config,
            "2-D mode requires height >= 1 and width >= 1");
  else
    require(model.num_vars >= 1, ErrorKind::config,
            "1-D mode requires num_vars >= 1");
  require(model.num_components >= 1, ErrorKind::config, "components must be >= 1");
  require(model.num_leaf_components >= 1, ErrorKind::config,
          "leaf_components must be >= 1");
  require(model.num_categories >= 2, ErrorKind::config,
          "categories must be >= 2");
  require(model.nu >= 0, ErrorKind::config, "nu must be >= 0");
  require(model.weight_net_depth == 1 || model.weight_net_depth == 2,
          ErrorKind::config, "weight_net_depth must be 1 or 2");
  require(model.num_classes >= 1, ErrorKind::config, "num_classes must be >= 1");
  if (model.leaf_mode == LeafMode::two_input_continuous)
    require(model.num_leaf_components == 2, ErrorKind::config,
            "leaf_mode two_input requires leaf_components = 2");
  train.validate();
}

Config parse_config_text(const std::string& text) {
  std::map<std::string, KeyValue> kvs;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      config_error(lineno, "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) config_error(lineno, "empty key");
    if (kvs.count(key)) config_error(lineno, "duplicate key '" + key + "'");
    kvs[key] = {value, lineno};
  }

  Config c;
  auto take = [&](const std::string& key) -> std::optional<KeyValue> {
    auto it = kvs.find(key);
    if (it == kvs.end()) return std::nullopt;
    KeyValue kv = it->second;
    kvs.erase(it);
    return kv;
  };

  if (auto kv = take("mode")) {
    if (kv->value == "1d")
      c.model.two_d = false;
    else if (kv->value == "2d")
      c.model.two_d = true;
    else
      config_error(kv->line, "mode must be 1d or 2d");
  }
  if (auto kv = take("num_vars")) c.model.num_vars = parse_int(*kv, "num_vars");
  if (auto kv = take("height")) c.model.height = parse_int(*kv, "height");
  if (auto kv = take("width")) c.model.width = parse_int(*kv, "width");
  if (auto kv = take("components"))
    c.model.num_components = parse_int(*kv, "components");
  if (auto kv = take("leaf_components"))
    c.model.num_leaf_components = parse_int(*kv, "leaf_components");
  if (auto kv = take("categories"))
    c.model.num_categories = parse_int(*kv, "categories");
  if (auto kv = take("nu")) c.model.nu = parse_int(*kv, "nu");
  if (auto kv = take("layer_kind")) {
    if (kv->value == "plain")
      c.model.kind = LayerKind::plain_sum;
    else if (kv->value == "quotient")
      c.model.kind = LayerKind::quotient;
    else if (kv->value == "neural")
      c.model.kind = LayerKind::neural;
    else
      config_error(kv->line, "layer_kind must be plain, quotient, or neural");
  }
  if (auto kv = take("leaf_mode")) {
    if (kv->value == "categorical")
      c.model.leaf_mode = LeafMode::categorical;
    else if (kv->value == "two_input")
      c.model.leaf_mode = LeafMode::two_input_continuous;
    else
      config_error(kv->line, "leaf_mode must be categorical or two_input");
  }
  if (auto kv = take("weight_net_depth"))
    c.model.weight_net_depth = parse_int(*kv, "weight_net_depth");
  if (auto kv = take("num_classes"))
    c.model.num_classes = parse_int(*kv, "num_classes");
  if (auto kv = take("learning_rate"))
    c.train.learning_rate = parse_double(*kv, "learning_rate");
  if (auto kv = take("batch_size"))
    c.train.batch_size = parse_int(*kv, "batch_size");
  if (auto kv = take("epochs")) c.train.epochs = parse_int(*kv, "epochs");
  if (auto kv = take("adam_beta1"))
    c.train.adam_beta1 = parse_double(*kv, "adam_beta1");
  if (auto kv = take("adam_beta2"))
    c.train.adam_beta2 = parse_double(*kv, "adam_beta2");
  if (auto kv = take("adam_epsilon"))
    c.train.adam_epsilon = parse_double(*kv, "adam_epsilon");
  if (auto kv = take("objective")) {
    if (kv->value == "nll")
      c.train.objective = Objective::nll;
    else if (kv->value == "cross_entropy")
      c.train.objective = Objective::cross_entropy;
    else
      config_error(kv->line, "objective must be nll or cross_entropy");
  }
  if (auto kv = take("seed")) c.train.seed = parse_u64(*kv, "seed");
  if (auto kv = take("val_fraction"))
    c.train.val_fraction = parse_double(*kv, "val_fraction");
  if (auto kv = take("weight_decay"))
    c.train.weight_decay = parse_double(*kv, "weight_decay");
  if (auto kv = take("threads")) c.train.threads = parse_int(*kv, "threads");
  if (auto kv = take("images")) c.images_path = kv->value;
  if (auto kv = take("labels")) c.labels_path = kv->value;

  if (!kvs.empty()) {
    const auto& [key, kv] = *kvs.begin();
    config_error(kv.line, "unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

Config parse_config_file(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  require(f != nullptr, ErrorKind::config, "cannot open config " + path);
  std::string text;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
  std::fclose(f);
  return parse_config_text(text);
}

std::string render_config(const Config& c) {
  std::ostringstream out;
  out << "mode = " << (c.model.two_d ? "2d" : "1d") << "\n";
  if (c.model.two_d) {
    out << "height = " << c.model.height << "\n";
    out << "width = " << c.model.width << "\n";
  } else {
    out << "num_vars = " << c.model.num_vars << "\n";
  }
  out << "components = " << c.model.num_components << "\n";
  out << "leaf_components = " << c.model.num_leaf_components << "\n";
  out << "categories = " << c.model.num_categories << "\n";
  out << "nu = " << c.model.nu << "\n";
  out << "layer_kind = "
      << (c.model.kind == LayerKind::plain_sum
              ? "plain"
              : c.model.kind == LayerKind::quotient ? "quotient" : "neural")
      << "\n";
  out << "leaf_mode = "
      << (c.model.leaf_mode == LeafMode::categorical ? "categorical"
                                                     : "two_input")
      << "\n";
  out << "weight_net_depth = " << c.model.weight_net_depth << "\n";
  out << "num_classes = " << c.model.num_classes << "\n";
  out << "learning_rate = " << c.train.learning_rate << "\n";
  out << "batch_size = " << c.train.batch_size << "\n";
  out << "epochs = " << c.train.epochs << "\n";
  out << "adam_beta1 = " << c.train.adam_beta1 << "\n";
  out << "adam_beta2 = " << c.train.adam_beta2 << "\n";
  out << "adam_epsilon = " << c.train.adam_epsilon << "\n";
  out << "objective = "
      << (c.train.objective == Objective::nll ? "nll" : "cross_entropy")
      << "\n";
  out << "seed = " << c.train.seed << "\n";
  out << "val_fraction = " << c.train.val_fraction << "\n";
  out << "weight_decay = " << c.train.weight_decay << "\n";
  out << "threads = " << c.train.threads << "\n";
  if (!c.images_path.empty()) out << "images = " << c.images_path << "\n";
  if (!c.labels_path.empty()) out << "labels = " << c.labels_path << "\n";
  return out.str();
}

namespace {

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(uint8_t(v >> (8 * i)));
}

void put_doubles(std::vector<uint8_t>& b, std::span<const double> xs) {
  size_t off = b.size();
  b.resize(off + xs.size() * sizeof(double));
  std::memcpy(b.data() + off, xs.data(), xs.size() * sizeof(double));
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t pos = 0;
  std::string path;

  void need(size_t n) {
    require(pos + n <= b.size(), ErrorKind::data,
            path + ": truncated checkpoint at byte offset " +
                std::to_string(pos));
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(b.begin() + pos, b.begin() + pos + n);
    pos += n;
    return s;
  }
  void doubles(std::span<double> out) {
    need(out.size() * sizeof(double));
    std::memcpy(out.data(), b.data() + pos, out.size() * sizeof(double));
    pos += out.size() * sizeof(double);
  }
};

std::vector<uint8_t> read_file(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  require(f != nullptr, ErrorKind::data, "cannot open checkpoint " + path);
  std::vector<uint8_t> bytes;
  uint8_t buf[1 << 16];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0)
    bytes.insert(bytes.end(), buf, buf + n);
  std::fclose(f);
  return bytes;
}

}  // namespace

void save_checkpoint(const Model& model, const Config& config,
                     const AdamState* optimizer, const std::string& path) {
  std::vector<uint8_t> b(kMagic, kMagic + 4);
  put_u32(b, kVersion);
  std::string cfg = render_config(config);
  put_u32(b, static_cast<uint32_t>(cfg.size()));
  b.insert(b.end(), cfg.begin(), cfg.end());
  put_u64(b, model.fingerprint());
  const auto& tensors = model.params().tensors();
  put_u32(b, static_cast<uint32_t>(tensors.size()));
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    put_u32(b, static_cast<uint32_t>(t.name.size()));
    b.insert(b.end(), t.name.begin(), t.name.end());
    put_u32(b, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(b, static_cast<uint32_t>(d));
    put_doubles(b, model.params().view(static_cast<int>(i)));
  }
  if (optimizer && !optimizer->m.empty()) {
    b.push_back(1);
    put_u64(b, static_cast<uint64_t>(optimizer->step));
    put_doubles(b, optimizer->m);
    put_doubles(b, optimizer->v);
  } else {
    b.push_back(0);
  }
  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, b.data() + 4, static_cast<uInt>(b.size() - 4)));
  put_u32(b, crc);

  const std::string tmp = path + ".tmp";
  FILE* f = std::fopen(tmp.c_str(), "wb");
  require(f != nullptr, ErrorKind::data, "cannot write " + tmp);
  size_t written = std::fwrite(b.data(), 1, b.size(), f);
  bool ok = written == b.size() && std::fclose(f) == 0;
  require(ok, ErrorKind::data, "write error in " + tmp);
  require(std::rename(tmp.c_str(), path.c_str()) == 0, ErrorKind::data,
          "cannot rename " + tmp + " to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  auto bytes = read_file(path);
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 4) == 0,
          ErrorKind::data, path + ": not a checkpoint (bad magic)");
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= uint32_t(bytes[bytes.size() - 4 + i]) << (8 * i);
  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, bytes.data() + 4, static_cast<uInt>(bytes.size() - 8)));
  require(crc == stored_crc, ErrorKind::data,
          path + ": checksum mismatch (corrupt or truncated checkpoint)");

  Reader r{bytes, 4, path};
  uint32_t version = r.u32();
  require(version == kVersion, ErrorKind::data,
          path + ": unsupported checkpoint version " + std::to_string(version));
  std::string cfg_text = r.str(r.u32());
  Config config = parse_config_text(cfg_text);
  uint64_t fingerprint = r.u64();

  Model model(config.model);
  require(model.fingerprint() == fingerprint, ErrorKind::data,
          path + ": structure fingerprint does not match its config block");
  uint32_t ntensors = r.u32();
  require(ntensors == model.params().tensors().size(), ErrorKind::data,
          path + ": tensor count mismatch");
  for (uint32_t i = 0; i < ntensors; ++i) {
    std::string name = r.str(r.u32());
    const auto& expect = model.params().tensors()[i];
    require(name == expect.name, ErrorKind::data,
            path + ": unexpected tensor '" + name + "'");
    uint32_t ndim = r.u32();
    require(ndim == expect.shape.size(), ErrorKind::data,
            path + ": tensor rank mismatch for " + name);
    for (uint32_t d = 0; d < ndim; ++d)
      require(static_cast<int>(r.u32()) == expect.shape[d], ErrorKind::data,
              path + ": tensor shape mismatch for " + name);
    r.doubles(model.params().view(static_cast<int>(i)));
  }
  LoadedCheckpoint out{std::move(config), std::move(model), std::nullopt};
  r.need(1);
  uint8_t has_opt = bytes[r.pos++];
  if (has_opt) {
    AdamState opt;
    opt.step = static_cast<int64_t>(r.u64());
    opt.m.resize(out.model.params().size());
    opt.v.resize(out.model.params().size());
    r.doubles(opt.m);
    r.doubles(opt.v);
    out.optimizer = std::move(opt);
  }
  return out;
}

void load_params_into(Model& model, const std::string& path) {
  LoadedCheckpoint loaded = load_checkpoint(path);
  require(loaded.model.fingerprint() == model.fingerprint(), ErrorKind::data,
          path + ": checkpoint fingerprint does not match the target model");
  auto src = loaded.model.params().flat();
  auto dst = model.params().flat();
  std::copy(src.begin(), src.end(), dst.begin());
}

}  // namespace pnc
