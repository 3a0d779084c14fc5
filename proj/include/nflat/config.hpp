// Model and training hyper-parameters, read from flat key=value text.
#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "nflat/encoder_block.hpp"
#include "nflat/errors.hpp"

namespace nflat {

struct ModelConfig {
  // Defaults sit inside the published search ranges (8 heads x 20 dims).
  std::size_t d_model = 160;
  std::size_t heads = 8;
  std::size_t self_heads = 0;  // 0: derived from heads and is_less_head
  bool is_less_head = true;
  std::size_t d_ff = 0;  // 0: 2 * d_model
  double char_embed_dropout = 0.3;
  double word_embed_dropout = 0.001;
  double fc_dropout1 = 0.2;
  double fc_dropout2 = 0.2;
  double attn_dropout = 0.1;
  double lr = 1e-3;
  std::size_t batch_size = 10;
  double warmup = 0.1;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  Ablation ablation = Ablation::None;
  bool tag_fallback = false;
  std::size_t max_match_len = 10;
  std::string precision = "f64";
  std::size_t patience = 10;
  double grad_clip = 0.0;  // 0: off
  bool log_train_f1 = false;

  std::size_t inter_heads() const { return heads; }
  std::size_t context_heads() const {
    if (self_heads) return self_heads;
    return is_less_head ? std::max<std::size_t>(1, heads / 2) : heads;
  }
  std::size_t ffn_dim() const { return d_ff ? d_ff : 2 * d_model; }

  void validate() const {
    auto rate = [](const char* name, double r) {
      if (!(r >= 0.0 && r < 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1)");
    };
    rate("char_embed_dropout", char_embed_dropout);
    rate("word_embed_dropout", word_embed_dropout);
    rate("fc_dropout1", fc_dropout1);
    rate("fc_dropout2", fc_dropout2);
    rate("attn_dropout", attn_dropout);
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (!(warmup >= 0.0 && warmup <= 1.0)) throw ConfigError("warmup must lie in [0,1]");
    if (d_model == 0 || d_model % 2 != 0) throw ConfigError("d_model must be positive and even");
    if (heads == 0 || d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
    if (d_model % context_heads() != 0) throw ConfigError("d_model must be divisible by the self-attention heads");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (max_match_len < 2) throw ConfigError("max_match_len must be at least 2");
    if (precision != "f64") throw ConfigError("precision '" + precision + "' is not supported (only f64)");
  }

  /// Sets one key from its text value; unknown keys are rejected.
  void set(const std::string& key, const std::string& value) {
    auto& table = setters();
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(*this, value);
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "d_model=" << d_model << "\nheads=" << heads << "\nself_heads=" << self_heads
       << "\nis_less_head=" << (is_less_head ? "true" : "false") << "\nd_ff=" << d_ff
       << "\nchar_embed_dropout=" << char_embed_dropout << "\nword_embed_dropout=" << word_embed_dropout
       << "\nfc_dropout1=" << fc_dropout1 << "\nfc_dropout2=" << fc_dropout2 << "\nattn_dropout=" << attn_dropout
       << "\nlr=" << lr << "\nbatch_size=" << batch_size << "\nwarmup=" << warmup << "\nepochs=" << epochs
       << "\nseed=" << seed << "\nablation=" << to_string(ablation)
       << "\ntag_fallback=" << (tag_fallback ? "true" : "false") << "\nmax_match_len=" << max_match_len
       << "\nprecision=" << precision << "\npatience=" << patience << "\ngrad_clip=" << grad_clip
       << "\nlog_train_f1=" << (log_train_f1 ? "true" : "false") << "\n";
    return os.str();
  }

  static ModelConfig parse(std::istream& in, const std::string& name = "<config>") {
    ModelConfig c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto text = trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos) throw file_error(name, line_no, "expected key=value");
      try {
        c.set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(name + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return c;
  }

  static ModelConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path);
    return parse(in, path);
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  }

  template <typename T>
  static T number(const std::string& key, const std::string& v) {
    T out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad value '" + v + "' for " + key);
    return out;
  }

  static bool boolean(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "True") return true;
    if (v == "false" || v == "0" || v == "False") return false;
    throw ConfigError("bad boolean '" + v + "' for " + key);
  }

  using Setter = std::function<void(ModelConfig&, const std::string&)>;

  static const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"d_model", [](ModelConfig& c, const std::string& v) { c.d_model = number<std::size_t>("d_model", v); }},
        {"heads", [](ModelConfig& c, const std::string& v) { c.heads = number<std::size_t>("heads", v); }},
        {"self_heads", [](ModelConfig& c, const std::string& v) { c.self_heads = number<std::size_t>("self_heads", v); }},
        {"is_less_head", [](ModelConfig& c, const std::string& v) { c.is_less_head = boolean("is_less_head", v); }},
        {"d_ff", [](ModelConfig& c, const std::string& v) { c.d_ff = number<std::size_t>("d_ff", v); }},
        {"char_embed_dropout", [](ModelConfig& c, const std::string& v) { c.char_embed_dropout = number<double>("char_embed_dropout", v); }},
        {"word_embed_dropout", [](ModelConfig& c, const std::string& v) { c.word_embed_dropout = number<double>("word_embed_dropout", v); }},
        {"fc_dropout1", [](ModelConfig& c, const std::string& v) { c.fc_dropout1 = number<double>("fc_dropout1", v); }},
        {"fc_dropout2", [](ModelConfig& c, const std::string& v) { c.fc_dropout2 = number<double>("fc_dropout2", v); }},
        {"attn_dropout", [](ModelConfig& c, const std::string& v) { c.attn_dropout = number<double>("attn_dropout", v); }},
        {"lr", [](ModelConfig& c, const std::string& v) { c.lr = number<double>("lr", v); }},
        {"batch_size", [](ModelConfig& c, const std::string& v) { c.batch_size = number<std::size_t>("batch_size", v); }},
        {"warmup", [](ModelConfig& c, const std::string& v) { c.warmup = number<double>("warmup", v); }},
        {"epochs", [](ModelConfig& c, const std::string& v) { c.epochs = number<std::size_t>("epochs", v); }},
        {"seed", [](ModelConfig& c, const std::string& v) { c.seed = number<std::uint64_t>("seed", v); }},
        {"ablation",
         [](ModelConfig& c, const std::string& v) {
           if (v == "none") c.ablation = Ablation::None;
           else if (v == "-RPE" || v == "RPE" || v == "no_rpe") c.ablation = Ablation::NoRpe;
           else if (v == "-TAG" || v == "TAG" || v == "no_tag") c.ablation = Ablation::NoTag;
           else throw ConfigError("bad ablation '" + v + "' (none, -RPE, -TAG)");
         }},
        {"tag_fallback", [](ModelConfig& c, const std::string& v) { c.tag_fallback = boolean("tag_fallback", v); }},
        {"max_match_len", [](ModelConfig& c, const std::string& v) { c.max_match_len = number<std::size_t>("max_match_len", v); }},
        {"precision", [](ModelConfig& c, const std::string& v) { c.precision = v; }},
        {"patience", [](ModelConfig& c, const std::string& v) { c.patience = number<std::size_t>("patience", v); }},
        {"grad_clip", [](ModelConfig& c, const std::string& v) { c.grad_clip = number<double>("grad_clip", v); }},
        {"log_train_f1", [](ModelConfig& c, const std::string& v) { c.log_train_f1 = boolean("log_train_f1", v); }},
    };
    return table;
  }
};

}  // namespace nflat
