// Command-line front end: train, eval, predict, match, stats, bench, gen-data.
// Exit codes: 0 success, 1 usage error, 2 data or model error.
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nflat/bench.hpp"
#include "nflat/checkpoint.hpp"
#include "nflat/config.hpp"
#include "nflat/data.hpp"
#include "nflat/lexicon.hpp"
#include "nflat/synthetic.hpp"
#include "nflat/train.hpp"

namespace nflat {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

namespace cli_detail {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::vector<std::string> sets;
  std::size_t workers = 1;
};

inline void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed (overrides config)");
  cmd->add_option("--config", c.config, "key=value config file");
  cmd->add_option("--set", c.sets, "Config override key=value (repeatable)");
  cmd->add_option("--workers", c.workers, "Worker threads for evaluation")->check(CLI::PositiveNumber);
}

inline void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::is_regular_file(path)) throw DataError(what + " not found: " + path);
}

/// Config file, then --set overrides, then --seed.
inline ModelConfig resolve_config(const Common& c) {
  ModelConfig cfg;
  if (!c.config.empty()) {
    require_file(c.config, "config file");
    cfg = ModelConfig::load(c.config);
  }
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

inline bool looks_like_conll(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    auto f = detail::split_ws(line);
    if (f.empty()) continue;
    return f.size() <= 2 && utf8::decode(f[0]).size() == 1;
  }
  return false;
}

inline Corpus read_input(const std::string& path, const std::string& format) {
  require_file(path, "input");
  if (format == "conll" || (format == "auto" && looks_like_conll(path))) return read_conll(path);
  std::ifstream in(path);
  return read_raw_text(in, path);
}

inline void print_report(std::ostream& out, const EvalReport& r, std::size_t sentences) {
  out << std::fixed << std::setprecision(4);
  out << "sentences " << sentences << "\n";
  out << "precision " << r.precision << "\nrecall " << r.recall << "\nf1 " << r.f1 << "\n";
  out << "gold " << r.total.gold << " predicted " << r.total.predicted << " correct " << r.total.correct << "\n";
  for (const auto& [type, c] : r.per_type) {
    const double p = c.predicted ? static_cast<double>(c.correct) / static_cast<double>(c.predicted) : 0.0;
    const double rc = c.gold ? static_cast<double>(c.correct) / static_cast<double>(c.gold) : 0.0;
    out << type << " p " << p << " r " << rc << " f1 " << f1_score(p, rc) << " support " << c.gold << "\n";
  }
  out.unsetf(std::ios::floatfield);
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;
  CLI::App app{"NFLAT lexicon-enhanced sequence labeling", "nflat"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every verb");

  Common common;

  // train
  std::string train_path, dev_path, test_path, lexicon_path, embeddings_path;
  std::string model_out = "model.ckpt", metrics_path = "metrics.jsonl";
  std::optional<std::size_t> epochs, d_model, heads, batch_size;
  std::optional<double> lr;
  std::optional<std::string> ablation;
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train, common);
  train->add_option("--train", train_path, "Training data (char tag per line)")->required();
  train->add_option("--dev", dev_path, "Dev data for model selection");
  train->add_option("--test", test_path, "Test data scored with the selected model");
  train->add_option("--lexicon", lexicon_path, "Lexicon, one word per line");
  train->add_option("--embeddings", embeddings_path, "Word vectors (token v1 .. vd per line)");
  train->add_option("--out", model_out, "Checkpoint path");
  train->add_option("--metrics", metrics_path, "JSON-lines metrics log");
  train->add_option("--epochs", epochs);
  train->add_option("--lr", lr);
  train->add_option("--d-model", d_model);
  train->add_option("--heads", heads);
  train->add_option("--batch-size", batch_size);
  train->add_option("--ablation", ablation, "none, -RPE or -TAG");

  // eval
  std::string model_path, data_path;
  auto* eval = app.add_subcommand("eval", "Entity-level P/R/F1 of a checkpoint on labeled data");
  add_common(eval, common);
  eval->add_option("--model", model_path)->required();
  eval->add_option("--data", data_path)->required();

  // predict
  std::string input_path, output_path, format = "auto";
  auto* predict_cmd = app.add_subcommand("predict", "Tag sentences, writing char<TAB>tag lines");
  add_common(predict_cmd, common);
  predict_cmd->add_option("--model", model_path)->required();
  predict_cmd->add_option("--input", input_path, "Dataset-format or raw text (one sentence per line)")->required();
  predict_cmd->add_option("--format", format)->check(CLI::IsMember({"auto", "conll", "raw"}));
  predict_cmd->add_option("--output", output_path, "Defaults to standard output");

  // match
  std::string text;
  std::optional<std::size_t> max_len;
  auto* match = app.add_subcommand("match", "Print lexicon matches as 'surface head tail'");
  add_common(match, common);
  match->add_option("--lexicon", lexicon_path)->required();
  auto* text_opt = match->add_option("--text", text, "Sentence to match");
  auto* input_opt = match->add_option("--input", input_path, "Raw text file, one sentence per line");
  text_opt->excludes(input_opt);
  input_opt->excludes(text_opt);
  match->add_option("--max-len", max_len, "Longest word matched");

  // stats
  auto* stats = app.add_subcommand("stats", "Character and matched-word length statistics");
  add_common(stats, common);
  stats->add_option("--lexicon", lexicon_path)->required();
  stats->add_option("--data", data_path, "Dataset or raw text")->required();
  stats->add_option("--format", format)->check(CLI::IsMember({"auto", "conll", "raw"}));

  // bench
  BenchOptions bench_opt;
  std::string lengths_arg, csv_path, plot_path;
  double budget_mb = 0.0;
  auto* bench = app.add_subcommand("bench", "Attention time/memory sweep, NFLAT vs flat lattice");
  add_common(bench, common);
  bench->add_option("--lengths", lengths_arg, "Comma-separated sentence lengths");
  bench->add_option("--density", bench_opt.density, "Matched words per character");
  bench->add_option("--reps", bench_opt.reps, "Timed sentences per length")->check(CLI::PositiveNumber);
  bench->add_option("--d-model", bench_opt.d_model);
  bench->add_option("--heads", bench_opt.heads);
  bench->add_option("--budget-mb", budget_mb, "Fail a model whose live attention buffers exceed this");
  bench->add_option("--out", csv_path, "CSV path (default standard output)");
  bench->add_option("--plot", plot_path, "SVG chart path");

  // gen-data
  SyntheticConfig syn;
  std::string out_dir;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus, lexicon and embeddings");
  add_common(gen, common);
  gen->add_option("--out-dir", out_dir)->required();
  gen->add_option("--train-size", syn.train);
  gen->add_option("--dev-size", syn.dev);
  gen->add_option("--test-size", syn.test);
  gen->add_option("--alphabet", syn.alphabet);
  gen->add_option("--types", syn.entity_types);
  gen->add_option("--vocab", syn.vocab);
  gen->add_option("--distractors", syn.distractors);
  gen->add_option("--heldout", syn.heldout_fraction, "Fraction of entity words kept out of train");
  gen->add_option("--embed-dim", syn.embed_dim);
  gen->add_option("--min-len", syn.min_len);
  gen->add_option("--max-len", syn.max_len);

  if (argc <= 1) {
    err << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) {
      ModelConfig cfg = resolve_config(common);
      if (epochs) cfg.epochs = *epochs;
      if (lr) cfg.lr = *lr;
      if (d_model) cfg.d_model = *d_model;
      if (heads) cfg.heads = *heads;
      if (batch_size) cfg.batch_size = *batch_size;
      if (ablation) cfg.set("ablation", *ablation);
      cfg.validate();
      require_file(train_path, "training data");
      const Corpus train_set = read_conll(train_path);
      Corpus dev_set, test_set;
      if (!dev_path.empty()) {
        require_file(dev_path, "dev data");
        dev_set = read_conll(dev_path);
      }
      if (!test_path.empty()) {
        require_file(test_path, "test data");
        test_set = read_conll(test_path);
      }
      std::optional<EmbeddingTable> table;
      std::vector<std::string> words;
      if (!embeddings_path.empty()) {
        require_file(embeddings_path, "embedding file");
        table = load_embeddings(embeddings_path);
      }
      if (!lexicon_path.empty()) {
        require_file(lexicon_path, "lexicon");
        words = load_word_list(lexicon_path);
      } else if (table) {
        for (const auto& t : table->tokens)
          if (t != kUnknownToken && t != kNonWordToken) words.push_back(t);
      }
      Rng rng(cfg.seed, "init");
      NflatModel model = NflatModel::create(cfg, train_set, words, std::move(table), rng);
      std::ofstream metrics(metrics_path);
      if (!metrics) throw DataError("cannot write metrics log " + metrics_path);
      const TrainResult res = train_model(model, train_set, dev_set, &metrics, common.workers, &out);
      save_checkpoint(model, model_out);
      out << "best_epoch " << res.best_epoch << "\n";
      if (!dev_set.empty()) out << "best_dev_f1 " << res.best_dev_f1 << "\n";
      if (!test_set.empty()) out << "test_f1 " << evaluate(model, test_set, common.workers).f1 << "\n";
      out << "checkpoint " << model_out << "\n";
      return kExitOk;
    }
    if (eval->parsed()) {
      resolve_config(common);
      require_file(model_path, "checkpoint");
      require_file(data_path, "data");
      const NflatModel model = load_checkpoint(model_path);
      const Corpus data = read_conll(data_path);
      print_report(out, evaluate(model, data, common.workers), data.size());
      return kExitOk;
    }
    if (predict_cmd->parsed()) {
      resolve_config(common);
      require_file(model_path, "checkpoint");
      const NflatModel model = load_checkpoint(model_path);
      Corpus data = read_input(input_path, format);
      const auto tags = predict(model, data, common.workers);
      for (std::size_t i = 0; i < data.size(); ++i) data[i].tags = tags[i];
      if (output_path.empty()) {
        write_conll(out, data, '\t');
      } else {
        std::ofstream f(output_path);
        if (!f) throw DataError("cannot write " + output_path);
        write_conll(f, data, '\t');
      }
      return kExitOk;
    }
    if (match->parsed()) {
      const ModelConfig cfg = resolve_config(common);
      if (text.empty() && input_path.empty()) throw CLI::RequiredError("--text or --input");
      require_file(lexicon_path, "lexicon");
      const auto trie = build_trie(std::span<const std::string>(load_word_list(lexicon_path)));
      const std::size_t limit = max_len.value_or(cfg.max_match_len);
      Corpus sentences;
      if (!text.empty()) {
        Sentence s;
        s.chars = utf8::decode(text);
        sentences.push_back(std::move(s));
      } else {
        require_file(input_path, "input");
        std::ifstream in(input_path);
        sentences = read_raw_text(in, input_path);
      }
      for (std::size_t k = 0; k < sentences.size(); ++k) {
        if (k) out << "\n";
        for (const auto& w : match_words(trie, sentences[k].chars, limit))
          out << utf8::encode(w.surface) << ' ' << w.head << ' ' << w.tail << "\n";
      }
      return kExitOk;
    }
    if (stats->parsed()) {
      const ModelConfig cfg = resolve_config(common);
      require_file(lexicon_path, "lexicon");
      const auto words = load_word_list(lexicon_path);
      const auto trie = build_trie(std::span<const std::string>(words));
      const Corpus data = read_input(data_path, format);
      const auto st = match_stats(corpus_chars(data), trie, cfg.max_match_len);
      out << "lexicon_words " << trie.word_count() << "\n";
      out << "sentences " << st.sentences << "\n";
      out << std::fixed << std::setprecision(2);
      out << "avg_char_len " << st.avg_char_len << "\nmax_char_len " << st.max_char_len << "\n";
      out << "avg_matched_len " << st.avg_matched_len << "\nmax_matched_len " << st.max_matched_len << "\n";
      out.unsetf(std::ios::floatfield);
      return kExitOk;
    }
    if (bench->parsed()) {
      const ModelConfig cfg = resolve_config(common);
      bench_opt.seed = cfg.seed;
      if (!lengths_arg.empty()) {
        bench_opt.lengths.clear();
        std::stringstream ss(lengths_arg);
        std::string item;
        while (std::getline(ss, item, ',')) {
          std::size_t v = 0;
          if (!detail::parse_uint(item, v) || v == 0) {
            err << "error: bad length '" << item << "' in --lengths\n";
            return kExitUsage;
          }
          bench_opt.lengths.push_back(v);
        }
      }
      if (bench_opt.heads == 0 || bench_opt.d_model % bench_opt.heads != 0 || bench_opt.d_model % 2 != 0) {
        err << "error: --d-model must be even and divisible by --heads\n";
        return kExitUsage;
      }
      bench_opt.budget_bytes = static_cast<std::size_t>(budget_mb * 1024.0 * 1024.0);
      const auto rows = run_bench(bench_opt);
      if (csv_path.empty()) {
        write_bench_csv(out, rows, bench_opt);
      } else {
        std::ofstream f(csv_path);
        if (!f) throw DataError("cannot write " + csv_path);
        write_bench_csv(f, rows, bench_opt);
      }
      if (!plot_path.empty()) {
        std::ofstream f(plot_path);
        if (!f) throw DataError("cannot write " + plot_path);
        write_bench_svg(f, rows);
      }
      return kExitOk;
    }
    if (gen->parsed()) {
      const ModelConfig cfg = resolve_config(common);
      syn.seed = cfg.seed;
      const auto data = gen_synthetic(syn);
      write_synthetic(data, out_dir);
      out << "wrote " << data.train.size() << "/" << data.dev.size() << "/" << data.test.size()
          << " sentences, " << data.lexicon.size() << " lexicon words to " << out_dir << "\n";
      return kExitOk;
    }
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace nflat
