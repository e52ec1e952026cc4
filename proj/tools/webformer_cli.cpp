#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "webformer/corpus.hpp"
#include "webformer/experiments.hpp"
#include "webformer/gradcheck.hpp"
#include "webformer/topology.hpp"
#include "webformer/trainer.hpp"

using namespace webformer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// A subcommand's settings: JSON defaults, then an optional --config file,
// then explicit flags. A null default marks a required key.
struct Command {
  CLI::App* app = nullptr;
  json defaults = json::object();
  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
};

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

void option(Command& c, const std::string& key, json def, const std::string& help) {
  c.defaults[key] = def;
  if (def.is_boolean())
    c.options[key] = c.app->add_flag(flag_name(key), c.switches[key], help);
  else
    c.options[key] = c.app->add_option(flag_name(key), c.values[key], help);
}

Command& command(CLI::App& app, std::vector<std::unique_ptr<Command>>& all, const std::string& name,
                 const std::string& help) {
  all.push_back(std::make_unique<Command>());
  Command& c = *all.back();
  c.app = app.add_subcommand(name, help);
  c.app->add_option("--config", c.config_path, "JSON file with settings; flags override it");
  return c;
}

json coerce(const std::string& key, const json& value, const json& def) {
  if (def.is_null() || def.type() == value.type()) return value;
  if (def.is_number() && value.is_number()) {
    if (def.is_number_float()) return value.get<double>();
    if (value.is_number_integer() || value.is_number_unsigned()) return value;
  }
  throw ConfigError("setting '" + key + "' has the wrong type");
}

json parse_flag(const std::string& key, const std::string& raw, const json& def) {
  try {
    std::size_t used = 0;
    if (def.is_number_float()) {
      const double v = std::stod(raw, &used);
      if (used == raw.size()) return v;
    } else if (def.is_number()) {
      const long long v = std::stoll(raw, &used);
      if (used == raw.size()) return v;
    } else {
      return raw;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("flag " + flag_name(key) + " expects a number, got '" + raw + "'");
}

json resolve(const Command& c) {
  json cfg = c.defaults;
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw IOError("cannot read config " + c.config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + c.config_path + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config " + c.config_path + " must hold a JSON object");
    for (const auto& [k, v] : file.items()) {
      if (!c.defaults.contains(k)) throw ConfigError("unknown config key '" + k + "'");
      cfg[k] = coerce(k, v, c.defaults[k]);
    }
  }
  for (const auto& [k, opt] : c.options) {
    if (opt->count() == 0) continue;
    cfg[k] = c.defaults[k].is_boolean() ? json(c.switches.at(k)) : parse_flag(k, c.values.at(k), c.defaults[k]);
  }
  for (const auto& [k, v] : cfg.items())
    if (v.is_null()) throw ConfigError(flag_name(k) + " is required");
  std::cerr << "resolved config: " << json{{"command", c.app->get_name()}, {"settings", cfg}}.dump() << std::endl;
  return cfg;
}

std::size_t as_size(const json& cfg, const std::string& key) {
  const long long v = cfg.at(key).get<long long>();
  if (v < 0) throw ConfigError(flag_name(key) + " must be non-negative");
  return static_cast<std::size_t>(v);
}

template <typename T>
std::vector<T> number_list(const std::string& key, const std::string& s) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    const json v = parse_flag(key, item, json(0));
    if (v.get<long long>() < 0) throw ConfigError(flag_name(key) + " entries must be non-negative");
    out.push_back(static_cast<T>(v.get<long long>()));
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  const fs::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IOError("cannot write " + path);
  out << text;
  if (!out) throw IOError("write failed for " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- shared model / training settings ----

void model_options(Command& c) {
  const ModelConfig d = ModelConfig::desk();
  option(c, "layers", d.layers, "encoder layers");
  option(c, "hidden", d.hidden, "hidden size");
  option(c, "heads", d.heads, "attention heads");
  option(c, "ffn", d.ffn, "feed-forward size");
  option(c, "radius", d.radius, "T2T window radius");
  option(c, "dropout", d.dropout, "dropout rate");
  option(c, "max_span_len", d.max_span_len, "longest decodable span");
  option(c, "share_qk", false, "share query/key projections by token type");
  option(c, "no_field_edges", false, "keep the field token out of the H2H softmax");
  option(c, "max_html_tokens", static_cast<long long>(IngestCaps{}.max_html_tokens), "HTML token cap");
  option(c, "max_text_tokens", static_cast<long long>(IngestCaps{}.max_text_tokens), "text token cap");
}

ModelConfig model_from(const json& cfg) {
  ModelConfig m = ModelConfig::desk();
  m.layers = cfg.at("layers").get<int>();
  m.hidden = cfg.at("hidden").get<int>();
  m.heads = cfg.at("heads").get<int>();
  m.ffn = cfg.at("ffn").get<int>();
  m.radius = cfg.at("radius").get<int>();
  m.dropout = cfg.at("dropout").get<double>();
  m.max_span_len = cfg.at("max_span_len").get<int>();
  m.share_qk_by_token_type = cfg.at("share_qk").get<bool>();
  m.flags.h2f = !cfg.at("no_field_edges").get<bool>();
  if (cfg.contains("disable"))
    for (const auto& p : split_list(cfg.at("disable").get<std::string>())) disable_pattern(m.flags, p);
  return m;
}

IngestCaps caps_from(const json& cfg) { return {as_size(cfg, "max_html_tokens"), as_size(cfg, "max_text_tokens")}; }

void train_options(Command& c) {
  const TrainConfig t;
  option(c, "epochs", t.epochs, "training epochs");
  option(c, "batch_size", t.batch_size, "examples per optimizer step");
  option(c, "lr", t.lr, "Adam learning rate");
  option(c, "seed", static_cast<long long>(t.seed), "seed for init, shuffling and dropout");
  option(c, "patience", t.patience, "stop after this many evaluations without dev gain (0 = off)");
  option(c, "eval_every", t.eval_every, "epochs between dev evaluations");
  option(c, "max_skip_rate", t.max_skip_rate, "largest tolerated fraction of unusable pages");
}

TrainConfig train_from(const json& cfg) {
  TrainConfig t;
  t.epochs = cfg.at("epochs").get<int>();
  t.batch_size = cfg.at("batch_size").get<int>();
  t.lr = cfg.at("lr").get<double>();
  t.seed = cfg.at("seed").get<std::uint64_t>();
  t.patience = cfg.at("patience").get<int>();
  t.eval_every = cfg.at("eval_every").get<int>();
  t.max_skip_rate = cfg.at("max_skip_rate").get<double>();
  t.caps = caps_from(cfg);
  t.model = model_from(cfg);
  t.validate();
  return t;
}

Vocab vocab_for(const std::string& path, const std::optional<Vocab>& fallback) {
  if (!path.empty()) return Vocab::load(path);
  if (!fallback) throw ConfigError("no vocabulary: pass --vocab");
  return *fallback;
}

CorpusSplits corpus_from(const json& cfg) {
  const std::string dir = cfg.at("data_dir").get<std::string>();
  if (!dir.empty()) {
    CorpusSplits c;
    c.train = read_dataset((fs::path(dir) / "train.jsonl").string());
    c.dev = read_dataset((fs::path(dir) / "dev.jsonl").string());
    c.test = read_dataset((fs::path(dir) / "test.jsonl").string());
    return c;
  }
  return generate_corpus(split_list(cfg.at("domains").get<std::string>()), as_size(cfg, "pages_per_domain"),
                         cfg.at("corpus_seed").get<std::uint64_t>());
}

// ---- subcommands ----

int gen_corpus(const json& cfg) {
  const auto domains = split_list(cfg.at("domains").get<std::string>());
  if (domains.empty()) throw ConfigError("--domains is empty");
  const auto corpus = generate_corpus(domains, as_size(cfg, "pages_per_domain"), cfg.at("seed").get<std::uint64_t>(),
                                      cfg.at("noise").get<double>());
  const fs::path out(cfg.at("out").get<std::string>());
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IOError("cannot create output directory " + out.string());
  write_dataset((out / "train.jsonl").string(), corpus.train);
  write_dataset((out / "dev.jsonl").string(), corpus.dev);
  write_dataset((out / "test.jsonl").string(), corpus.test);
  std::cout << json{{"out", out.string()},
                    {"train", corpus.train.size()},
                    {"dev", corpus.dev.size()},
                    {"test", corpus.test.size()}}
                   .dump()
            << '\n';
  return 0;
}

int build_vocab_cmd(const json& cfg) {
  const auto pages = read_dataset(cfg.at("data").get<std::string>());
  if (pages.empty()) throw EmptyDataset("no pages in " + cfg.at("data").get<std::string>());
  const Vocab v = build_vocab(pages, as_size(cfg, "min_freq"));
  v.save(cfg.at("out").get<std::string>());
  std::cout << json{{"words", v.word_count()}, {"tags", v.tag_count()}, {"fields", v.fields()}, {"hash", v.hash()}}.dump()
            << '\n';
  return 0;
}

int train_cmd(const json& cfg) {
  TrainConfig tc = train_from(cfg);
  const auto train_pages = read_dataset(cfg.at("train").get<std::string>());
  const std::string dev_path = cfg.at("dev").get<std::string>();
  const auto dev_pages = dev_path.empty() ? std::vector<LabeledPage>{} : read_dataset(dev_path);
  const std::string vocab_path = cfg.at("vocab").get<std::string>();
  const Vocab vocab = vocab_path.empty() ? build_vocab(train_pages) : Vocab::load(vocab_path);
  tc.model.set_vocab(vocab);
  const PreparedSet tr = prepare(train_pages, vocab, tc.model, tc.caps, tc.max_skip_rate);
  const PreparedSet dv = prepare(dev_pages, vocab, tc.model, tc.caps);
  for (const auto& w : tr.warnings) std::cerr << "warning: " << w << '\n';
  WebFormer<float> model(tc.model, tc.seed);
  const auto result = train(model, tr, dv, tc, [](const EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " dev_em " << e.dev_em << " (" << e.seconds << " s)"
              << std::endl;
  });
  const std::string out = cfg.at("out").get<std::string>();
  save_checkpoint(out, model, vocab);
  write_text((fs::path(out) / "history.json").string(), history_to_json(result.history).dump(2) + "\n");
  const Metrics train_metrics = evaluate(model, tr);
  std::cout << json{{"checkpoint", out},
                    {"examples", tr.examples.size()},
                    {"best_epoch", result.best_epoch},
                    {"best_dev_em", result.best_dev_em},
                    {"train_em", train_metrics.exact_match()},
                    {"history", history_to_json(result.history)}}
                   .dump()
            << '\n';
  return 0;
}

int eval_cmd(const json& cfg) {
  const Checkpoint ck = load_checkpoint(cfg.at("checkpoint").get<std::string>());
  const Vocab vocab = vocab_for(cfg.at("vocab").get<std::string>(), ck.vocab);
  const auto pages = read_dataset(cfg.at("data").get<std::string>());
  const Metrics m = evaluate(ck, pages, vocab, caps_from(cfg));
  write_text(cfg.at("out_json").get<std::string>(), m.to_json().dump(2) + "\n");
  write_text(cfg.at("out_csv").get<std::string>(), m.to_csv());
  std::cout << m.to_json().dump() << '\n';
  return 0;
}

int extract_cmd(const json& cfg) {
  const Checkpoint ck = load_checkpoint(cfg.at("checkpoint").get<std::string>());
  const Vocab vocab = vocab_for(cfg.at("vocab").get<std::string>(), ck.vocab);
  require_vocab(ck, vocab);
  const std::string html = read_text(cfg.at("html").get<std::string>());
  const std::string field = cfg.at("field").get<std::string>();
  const Document doc = ingest(html, vocab, caps_from(cfg));
  WebFormer<float> model(ck.config, ck.params);
  const SpanPrediction p = model.predict(doc, model.topology(doc), vocab.field_id(field));
  std::cout << json{{"field", field}, {"text", p.text}, {"score", p.score}, {"begin", p.begin}, {"end", p.end}}.dump()
            << '\n';
  return 0;
}

int gradcheck_cmd(const json& cfg) {
  GradcheckConfig gc;
  gc.coords = as_size(cfg, "coords");
  gc.seed = cfg.at("seed").get<std::uint64_t>();
  gc.tolerance = cfg.at("tolerance").get<double>();
  gc.step = cfg.at("step").get<double>();
  gc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto fx = make_gradcheck_fixture(gc.seed);
  std::function<void(num::ParamStore<double>&)> tamper;
  if (cfg.at("corrupt_adjoint").get<bool>())
    tamper = [](num::ParamStore<double>& s) {
      // Negative control: scale the adjoint of every FFN weight.
      for (auto& p : s.params())
        if (p.name.find("ffn.w") != std::string::npos)
          for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] *= 1.5;
    };
  const auto report = gradcheck(fx.model, fx.doc, fx.topo, fx.field_id, fx.begin, fx.end, gc, tamper);
  json j = report.to_json();
  j["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(cfg.at("out").get<std::string>(), j.dump(2) + "\n");
  std::cout << j.dump() << '\n';
  std::cerr << "worst relative error " << report.worst().rel_error << " (" << report.worst().tensor << "["
            << report.worst().index << "])" << std::endl;
  if (!report.passed()) {
    std::ostringstream os;
    os << report.failures().size() << " of " << report.samples.size() << " coordinates exceed " << gc.tolerance << ":";
    for (const auto& f : report.failures()) os << ' ' << f.tensor << '[' << f.index << ']';
    throw GradCheckFailure(os.str());
  }
  return 0;
}

int bench_cmd(const json& cfg) {
  BenchConfig bc;
  bc.lengths = number_list<std::size_t>("lengths", cfg.at("lengths").get<std::string>());
  bc.mode = cfg.at("mode").get<std::string>();
  bc.html_nodes = as_size(cfg, "html_nodes");
  bc.radius = cfg.at("radius").get<int>();
  bc.repeats = cfg.at("repeats").get<int>();
  bc.seed = cfg.at("seed").get<std::uint64_t>();
  const auto rows = bench_attention(bc);
  const std::string csv = bench_to_csv(rows);
  const std::string out = cfg.at("out").get<std::string>();
  if (out.empty()) std::cout << csv;
  else write_text(out, csv);

  // Pass/fail on the shortest and longest lengths: near-linear growth for
  // sparse attention, quadratic growth for the full baseline.
  auto lo = std::min_element(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.length < b.length; });
  auto hi = std::max_element(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.length < b.length; });
  if (lo->length == hi->length) return 0;
  const double k = static_cast<double>(hi->length) / static_cast<double>(lo->length);
  const double fr = static_cast<double>(hi->flops) / static_cast<double>(lo->flops);
  const double tr = hi->ms / lo->ms;
  std::cerr << "flops ratio " << fr << ", time ratio " << tr << " over a " << k << "x length increase" << std::endl;
  if (bc.mode == "webformer" && (fr > 1.05 * k || tr > 1.5 * k))
    throw Error("bench criteria not met: flops ratio " + std::to_string(fr) + ", time ratio " + std::to_string(tr));
  if (bc.mode == "full" && std::abs(fr / (k * k) - 1.0) > 0.05)
    throw Error("bench criteria not met: flops ratio " + std::to_string(fr) + " is not quadratic");
  return 0;
}

int ablate_cmd(const json& cfg) {
  AblationConfig ac;
  ac.disable = split_list(cfg.at("disable").get<std::string>());
  for (const auto& p : ac.disable) {
    PatternFlags f;
    disable_pattern(f, p);
  }
  ac.seeds = number_list<std::uint64_t>("seeds", cfg.at("seeds").get<std::string>());
  json base = cfg;
  base.erase("disable");  // the ablated patterns, not the base model's
  ac.train = train_from(base);
  const CorpusSplits corpus = corpus_from(cfg);
  const Vocab vocab = build_vocab(corpus.train);
  const auto rows = ablation_experiment(corpus, vocab, ac, [](const std::string& s) { std::cerr << s << std::endl; });
  write_text(cfg.at("out_csv").get<std::string>(), ablation_to_csv(rows));
  write_text(cfg.at("out_json").get<std::string>(), ablation_to_json(rows).dump(2) + "\n");
  std::cout << ablation_to_json(rows).dump() << '\n';
  return 0;
}

int transfer_cmd(const json& cfg) {
  TransferConfig tc;
  tc.source_domains = split_list(cfg.at("source").get<std::string>());
  tc.target_domain = cfg.at("target").get<std::string>();
  tc.shots.clear();
  for (auto s : number_list<int>("shots", cfg.at("shots").get<std::string>())) tc.shots.push_back(s);
  tc.finetune_steps = cfg.at("finetune_steps").get<int>();
  tc.finetune_batch = cfg.at("finetune_batch").get<int>();
  tc.finetune_lr = cfg.at("finetune_lr").get<double>();
  tc.pretrain = train_from(cfg);
  std::vector<std::string> domains = tc.source_domains;
  domains.push_back(tc.target_domain);
  const auto corpus = generate_corpus(domains, as_size(cfg, "pages_per_domain"), cfg.at("corpus_seed").get<std::uint64_t>());
  const Vocab vocab = build_vocab(corpus.train);
  const auto rows = transfer_experiment(corpus, vocab, tc, [](const std::string& s) { std::cerr << s << std::endl; });
  json out = json::array();
  for (const auto& r : rows) out.push_back({{"shots", r.shots}, {"metrics", r.metrics.to_json()}});
  write_text(cfg.at("out_json").get<std::string>(), out.dump(2) + "\n");
  std::cout << out.dump() << '\n';
  return 0;
}

int ingest_dump_cmd(const json& cfg) {
  const std::string html = read_text(cfg.at("html").get<std::string>());
  const std::string vocab_path = cfg.at("vocab").get<std::string>();
  Vocab vocab;
  if (!vocab_path.empty()) vocab = Vocab::load(vocab_path);
  const Document doc = ingest(html, vocab, caps_from(cfg));
  const int radius = cfg.at("radius").get<int>();
  json j = {{"document", document_to_json(doc)},
            {"topology", topology_to_json(build_topology(doc, radius, !cfg.at("no_field_edges").get<bool>()))}};
  std::cout << j.dump(cfg.at("compact").get<bool>() ? -1 : 2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WebFormer structured-field extraction toolkit"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> commands;
  std::map<std::string, std::function<int(const json&)>> run;

  {
    auto& c = command(app, commands, "gen-corpus", "write synthetic train/dev/test JSONL");
    option(c, "domains", "events,products,movies", "comma-separated domains");
    option(c, "pages_per_domain", 1000, "pages generated per domain");
    option(c, "seed", 1, "corpus seed");
    option(c, "noise", 1.0, "template noise scale");
    option(c, "out", nullptr, "output directory");
    run["gen-corpus"] = gen_corpus;
  }
  {
    auto& c = command(app, commands, "build-vocab", "build a vocabulary from a JSONL dataset");
    option(c, "data", nullptr, "training JSONL");
    option(c, "min_freq", 2, "minimum word frequency");
    option(c, "out", nullptr, "vocabulary JSON path");
    run["build-vocab"] = build_vocab_cmd;
  }
  {
    auto& c = command(app, commands, "train", "train a model and write a checkpoint");
    option(c, "train", nullptr, "training JSONL");
    option(c, "dev", "", "dev JSONL used for model selection");
    option(c, "vocab", "", "vocabulary JSON (built from --train when absent)");
    option(c, "out", nullptr, "checkpoint directory");
    option(c, "disable", "", "comma-separated patterns to ablate");
    train_options(c);
    model_options(c);
    run["train"] = train_cmd;
  }
  {
    auto& c = command(app, commands, "eval", "score a checkpoint on a JSONL dataset");
    option(c, "data", nullptr, "JSONL to score");
    option(c, "checkpoint", nullptr, "checkpoint directory");
    option(c, "vocab", "", "vocabulary JSON (defaults to the checkpoint's)");
    option(c, "out_json", "", "metrics JSON path");
    option(c, "out_csv", "", "metrics CSV path");
    option(c, "max_html_tokens", static_cast<long long>(IngestCaps{}.max_html_tokens), "HTML token cap");
    option(c, "max_text_tokens", static_cast<long long>(IngestCaps{}.max_text_tokens), "text token cap");
    run["eval"] = eval_cmd;
  }
  {
    auto& c = command(app, commands, "extract", "extract one field from an HTML file");
    option(c, "html", nullptr, "HTML file");
    option(c, "field", nullptr, "field name");
    option(c, "checkpoint", nullptr, "checkpoint directory");
    option(c, "vocab", "", "vocabulary JSON (defaults to the checkpoint's)");
    option(c, "max_html_tokens", static_cast<long long>(IngestCaps{}.max_html_tokens), "HTML token cap");
    option(c, "max_text_tokens", static_cast<long long>(IngestCaps{}.max_text_tokens), "text token cap");
    run["extract"] = extract_cmd;
  }
  {
    auto& c = command(app, commands, "gradcheck", "finite-difference check of backprop gradients");
    option(c, "coords", 200, "coordinates to check");
    option(c, "seed", 1, "seed for the model, page and coordinates");
    option(c, "tolerance", 1e-5, "largest accepted relative error");
    option(c, "step", 1e-4, "central-difference step");
    option(c, "corrupt_adjoint", false, "negative control: scale FFN weight gradients before comparing");
    option(c, "out", "", "report JSON path");
    run["gradcheck"] = gradcheck_cmd;
  }
  {
    auto& c = command(app, commands, "bench-attn", "attention cost against text length");
    option(c, "lengths", "512,1024,2048", "comma-separated text lengths");
    option(c, "mode", "webformer", "webformer or full");
    option(c, "out", "", "CSV path (stdout when absent)");
    option(c, "html_nodes", 64, "fixed HTML token count");
    option(c, "radius", 8, "T2T radius");
    option(c, "repeats", 5, "timed forward passes per length (fastest reported)");
    option(c, "seed", 1, "seed for the page and weights");
    run["bench-attn"] = bench_cmd;
  }
  {
    auto& c = command(app, commands, "ablate", "train the full model and single-pattern ablations");
    option(c, "disable", "h2h,h2t,t2h,t2t", "patterns to ablate, one model each");
    option(c, "seeds", "1", "comma-separated seeds");
    option(c, "data_dir", "", "directory with train/dev/test.jsonl (generated when absent)");
    option(c, "domains", "events,products,movies", "domains of the generated corpus");
    option(c, "pages_per_domain", 600, "pages per domain of the generated corpus");
    option(c, "corpus_seed", 1, "seed of the generated corpus");
    option(c, "out_json", "", "table JSON path");
    option(c, "out_csv", "", "table CSV path");
    train_options(c);
    model_options(c);
    run["ablate"] = ablate_cmd;
  }
  {
    auto& c = command(app, commands, "transfer", "pretrain on source domains, few-shot on a target domain");
    option(c, "source", "products,movies", "source domains");
    option(c, "target", "events", "target domain");
    option(c, "shots", "0,100", "comma-separated shot counts");
    option(c, "pages_per_domain", 600, "pages per domain");
    option(c, "corpus_seed", 1, "corpus seed");
    option(c, "finetune_steps", TransferConfig{}.finetune_steps, "fine-tune optimizer steps");
    option(c, "finetune_batch", TransferConfig{}.finetune_batch, "fine-tune batch size");
    option(c, "finetune_lr", TransferConfig{}.finetune_lr, "fine-tune learning rate");
    option(c, "out_json", "", "results JSON path");
    train_options(c);
    model_options(c);
    run["transfer"] = transfer_cmd;
  }
  {
    auto& c = command(app, commands, "ingest-dump", "print the parsed graph, tokens and topology as JSON");
    option(c, "html", nullptr, "HTML file");
    option(c, "vocab", "", "vocabulary JSON (ids are UNK without one)");
    option(c, "radius", 8, "T2T radius");
    option(c, "no_field_edges", false, "omit field edges from H2H");
    option(c, "compact", false, "single-line JSON");
    option(c, "max_html_tokens", static_cast<long long>(IngestCaps{}.max_html_tokens), "HTML token cap");
    option(c, "max_text_tokens", static_cast<long long>(IngestCaps{}.max_text_tokens), "text token cap");
    run["ingest-dump"] = ingest_dump_cmd;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const ConfigError err(e.what());
    std::cerr << "error: " << err.what() << '\n';
    return err.exit_code();
  }

  for (const auto& c : commands) {
    if (!c->app->parsed()) continue;
    try {
      return run.at(c->app->get_name())(resolve(*c));
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return e.exit_code();
    } catch (const json::exception& e) {
      const ConfigError err(e.what());
      std::cerr << "error: " << err.what() << '\n';
      return err.exit_code();
    }
  }
  return 0;
}
