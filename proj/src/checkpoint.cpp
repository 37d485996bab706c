#include "jsrl/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "jsrl/errors.hpp"

namespace jsrl {

namespace {

constexpr const char* kMagic = "jsrl-checkpoint v1";

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

int parse_int_field(const std::string& v, std::size_t line) {
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') throw ParseError("bad integer '" + v + "'", line);
  return static_cast<int>(x);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const ModelConfig& c = ckpt.model.config();
  std::ostringstream os;
  os << kMagic << '\n';
  os << "model embed_dim=" << c.embed_dim << " hidden_dim=" << c.hidden_dim << " layers=" << c.layers
     << " heads=" << c.heads << " atoms=" << c.atoms << " critic=" << c.critic << " dueling=" << c.dueling
     << " noisy=" << c.noisy << '\n';
  for (const auto& [k, v] : ckpt.settings) os << "setting " << k << ' ' << v << '\n';
  for (const auto& [k, v] : ckpt.metadata) os << "meta " << k << ' ' << v << '\n';
  for (const auto* p : ckpt.model.parameters()) {
    os << "param " << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index col = 0; col < p->value.cols(); ++col) os << (col ? " " : "") << hexfloat(p->value(r, col));
      os << '\n';
    }
  }
  os << "end\n";
  return os.str();
}

Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++number;
    return true;
  };
  if (!next_line() || line != kMagic) throw ParseError("not a checkpoint (missing '" + std::string(kMagic) + "')", number);
  if (!next_line() || line.rfind("model ", 0) != 0) throw ParseError("expected model line", number);
  ModelConfig cfg;
  {
    std::istringstream ls(line.substr(6));
    std::string kv;
    while (ls >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ParseError("bad model field '" + kv + "'", number);
      const std::string key = kv.substr(0, eq);
      const int v = parse_int_field(kv.substr(eq + 1), number);
      if (key == "embed_dim") cfg.embed_dim = v;
      else if (key == "hidden_dim") cfg.hidden_dim = v;
      else if (key == "layers") cfg.layers = v;
      else if (key == "heads") cfg.heads = v;
      else if (key == "atoms") cfg.atoms = v;
      else if (key == "critic") cfg.critic = v != 0;
      else if (key == "dueling") cfg.dueling = v != 0;
      else if (key == "noisy") cfg.noisy = v != 0;
      else throw ParseError("unknown model field '" + key + "'", number);
    }
  }
  Rng init_rng(0);
  Checkpoint ckpt{Model(cfg, init_rng), {}, {}};
  std::map<std::string, ad::Parameter*> by_name;
  for (auto* p : ckpt.model.parameters()) by_name[p->name] = p;
  std::size_t loaded = 0;
  bool ended = false;
  while (next_line()) {
    if (line.empty()) continue;
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "setting" || tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      (tag == "setting" ? ckpt.settings : ckpt.metadata)[key] = value;
    } else if (tag == "param") {
      std::string name;
      long rows = 0, cols = 0;
      if (!(ls >> name >> rows >> cols)) throw ParseError("malformed param header", number);
      auto it = by_name.find(name);
      if (it == by_name.end()) throw ParseError("unknown parameter '" + name + "'", number);
      ad::Parameter& p = *it->second;
      if (p.value.rows() != rows || p.value.cols() != cols) throw ParseError("shape mismatch for '" + name + "'", number);
      for (long r = 0; r < rows; ++r) {
        if (!next_line()) throw ParseError("truncated parameter '" + name + "'", number);
        std::istringstream vs(line);
        for (long c = 0; c < cols; ++c) {
          std::string tok;
          if (!(vs >> tok)) throw ParseError("too few values for '" + name + "'", number);
          char* end = nullptr;
          p.value(r, c) = std::strtod(tok.c_str(), &end);
          if (*end != '\0') throw ParseError("bad value '" + tok + "'", number);
        }
      }
      ++loaded;
    } else {
      throw ParseError("unknown record '" + tag + "'", number);
    }
  }
  if (!ended) throw ParseError("checkpoint truncated (no 'end')", number);
  if (loaded != by_name.size()) throw ParseError("checkpoint is missing parameters", number);
  ckpt.model.zero_grad();
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << serialize_checkpoint(ckpt);
  if (!out) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace jsrl
