#include "bse/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace bse {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'B', 'S', 'E', 'C', 'K', 'P', 'T', '1'};

json config_to_json(const ModelConfig& c) {
  return json{{"encoder_channels", c.encoder_channels},
              {"kernel_freq", c.kernel_freq},
              {"kernel_time", c.kernel_time},
              {"stride_freq", c.stride_freq},
              {"embed_dim", c.embed_dim},
              {"attn_hidden", c.attn_hidden},
              {"attn_heads", c.attn_heads},
              {"post_linear_features", c.post_linear_features},
              {"causal", c.causal},
              {"input_context", c.input_context},
              {"mask_magnitude_clamp", c.mask_magnitude_clamp},
              {"bins", c.bins}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.kernel_freq = j.at("kernel_freq");
  c.kernel_time = j.at("kernel_time");
  c.stride_freq = j.at("stride_freq");
  c.embed_dim = j.at("embed_dim");
  c.attn_hidden = j.at("attn_hidden");
  c.attn_heads = j.at("attn_heads");
  c.post_linear_features = j.at("post_linear_features");
  c.causal = j.at("causal");
  c.input_context = j.at("input_context");
  c.mask_magnitude_clamp = j.at("mask_magnitude_clamp");
  c.bins = j.at("bins");
  return c;
}

void write_doubles(std::ofstream& f, const std::vector<double>& v) {
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& f, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint: truncated payload");
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const OptimizerState* opt, const Checkpoint& meta) {
  json header;
  header["version"] = meta.version;
  header["config"] = config_to_json(model.config());
  header["epoch"] = meta.epoch;
  header["best_val_loss"] = meta.best_val_loss;
  header["lr"] = meta.lr;
  header["epochs_since_best"] = meta.epochs_since_best;

  json tensors = json::array();
  for (const auto& [name, t] : model.params().items)
    tensors.push_back(json{{"name", name}, {"shape", t.shape}});
  header["tensors"] = tensors;

  json bn = json::array();
  for (const auto& s : model.bn_states())
    bn.push_back(json{{"channels", s.running_mean.size()}});
  header["batchnorm"] = bn;

  header["optimizer"] = (opt != nullptr);
  if (opt) header["optimizer_step"] = opt->step;

  const std::string body = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + tmp);
    f.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = body.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    for (const auto& [name, t] : model.params().items) write_doubles(f, t.v);
    for (const auto& s : model.bn_states()) {
      write_doubles(f, s.running_mean);
      write_doubles(f, s.running_var);
    }
    if (opt) {
      write_doubles(f, opt->m);
      write_doubles(f, opt->v);
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: rename failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path, std::optional<Model>& model,
                           OptimizerState* opt) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::string(magic, 8) != std::string(kMagic, 8))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string body(len, '\0');
  f.read(body.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);
  const json header = json::parse(body);

  Checkpoint meta;
  meta.version = header.at("version");
  meta.epoch = header.at("epoch");
  meta.best_val_loss = header.at("best_val_loss");
  meta.lr = header.at("lr");
  meta.epochs_since_best = header.value("epochs_since_best", 0);

  model.emplace(config_from_json(header.at("config")));
  auto& params = model->params();
  const json& tensors = header.at("tensors");
  if (tensors.size() != params.items.size())
    throw std::runtime_error("checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    const json& entry = tensors[i];
    auto& [name, t] = params.items[i];
    if (entry.at("name") != name)
      throw std::runtime_error("checkpoint: tensor name mismatch at " + name);
    if (entry.at("shape").get<std::vector<int>>() != t.shape)
      throw std::runtime_error("checkpoint: tensor shape mismatch at " + name);
    read_doubles(f, t.v, t.v.size());
  }
  const json& bn = header.at("batchnorm");
  if (bn.size() != model->bn_states().size())
    throw std::runtime_error("checkpoint: batchnorm state count mismatch");
  for (std::size_t i = 0; i < bn.size(); ++i) {
    auto& s = model->bn_states()[i];
    const std::size_t ch = bn[i].at("channels");
    read_doubles(f, s.running_mean, ch);
    read_doubles(f, s.running_var, ch);
  }
  if (header.at("optimizer").get<bool>()) {
    OptimizerState local;
    OptimizerState* dst = opt ? opt : &local;
    dst->step = header.at("optimizer_step");
    const std::size_t n = params.total_values();
    read_doubles(f, dst->m, n);
    read_doubles(f, dst->v, n);
  } else if (opt) {
    opt->m.clear();
    opt->v.clear();
    opt->step = 0;
  }
  return meta;
}

}  // namespace bse
