#pragma once

// Command-line front end. Exit codes: 0 success, 1 validation or usage
// error, 2 I/O error.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "extsum/checkpoint.hpp"
#include "extsum/corpus.hpp"
#include "extsum/error.hpp"
#include "extsum/eval.hpp"
#include "extsum/model.hpp"
#include "extsum/oracle.hpp"
#include "extsum/rouge.hpp"
#include "extsum/synthetic.hpp"
#include "extsum/train.hpp"

#ifndef EXTSUM_VERSION
#define EXTSUM_VERSION "0.0.0"
#endif

namespace extsum::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

struct ModelOptions {
    std::size_t d_model = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t d_ff = 128;
    std::size_t lora_rank = 8;
    std::size_t pretrain_context = 512;
    /// Runtime context over pretrain context (L' / L).
    double rope_scale = 8.0;
    /// Alternative spelling as pretrain over runtime (L / L'); 0 = unset.
    double rope_ratio = 0.0;
    std::string attention_mode = "causal";
    std::size_t block_size = 64;
    bool naive_attention = false;
    std::size_t vocab_size = 5000;
    std::size_t max_len = 0;

    ModelConfig to_config(std::size_t vocab) const {
        ModelConfig c;
        c.vocab_size = vocab;
        c.d_model = d_model;
        c.n_layers = layers;
        c.n_heads = heads;
        c.d_ff = d_ff;
        c.lora_rank = lora_rank;
        c.pretrain_context = pretrain_context;
        const double scale = rope_ratio > 0.0 ? 1.0 / rope_ratio : rope_scale;
        if (!(scale > 0.0)) throw ConfigError("rope scale must be positive");
        c.runtime_context = static_cast<std::size_t>(std::llround(static_cast<double>(pretrain_context) * scale));
        c.attention_mode = parse_attention_mode(attention_mode);
        c.attention_block = block_size;
        c.tiled_attention = !naive_attention;
        c.validate();
        return c;
    }

    std::size_t effective_max_len(const ModelConfig& c) const {
        return max_len == 0 ? c.runtime_context : std::min(max_len, c.runtime_context);
    }
};

namespace detail {

inline void add_model_options(CLI::App* sub, ModelOptions& m) {
    sub->add_option("--d-model", m.d_model, "Model width")->capture_default_str();
    sub->add_option("--layers", m.layers, "Decoder layers")->capture_default_str();
    sub->add_option("--heads", m.heads, "Attention heads")->capture_default_str();
    sub->add_option("--d-ff", m.d_ff, "Feed-forward hidden width")->capture_default_str();
    sub->add_option("--lora-rank", m.lora_rank, "Adapter rank r")->capture_default_str();
    sub->add_option("--pretrain-context", m.pretrain_context, "Base model context length L")->capture_default_str();
    auto* scale = sub->add_option("--rope-scale", m.rope_scale,
                                  "Context extension factor L'/L (positions are scaled by its reciprocal)")
                      ->capture_default_str();
    auto* ratio = sub->add_option("--rope-ratio", m.rope_ratio, "Position scaling ratio L/L' (0 = use --rope-scale)")
                      ->capture_default_str();
    scale->excludes(ratio);
    sub->add_option("--attention-mode", m.attention_mode, "causal or bidirectional")
        ->check(CLI::IsMember({"causal", "bidirectional"}))
        ->capture_default_str();
    sub->add_option("--block-size", m.block_size, "Tiled attention block size")->capture_default_str();
    sub->add_flag("--naive-attention", m.naive_attention, "Use the reference attention kernel")->capture_default_str();
    sub->add_option("--vocab-size", m.vocab_size, "Maximum vocabulary size")->capture_default_str();
    sub->add_option("--max-len", m.max_len, "Token budget per document (0 = runtime context)")->capture_default_str();
}

inline void add_train_options(CLI::App* sub, TrainConfig& t) {
    sub->add_option("--lr", t.learning_rate, "Learning rate")->capture_default_str();
    sub->add_option("--accumulation", t.accumulation_steps, "Documents per optimizer step")->capture_default_str();
    sub->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
    sub->add_option("--val-interval", t.validation_interval, "Validation period as a fraction of an epoch")
        ->capture_default_str();
    sub->add_option("--data-fraction", t.data_fraction, "Fraction of training documents used")->capture_default_str();
    sub->add_option("--max-steps", t.max_steps, "Stop after this many optimizer steps (0 = no limit)")
        ->capture_default_str();
    sub->add_flag("--frozen", t.frozen, "Classifier-only baseline with adapters disabled")->capture_default_str();
    sub->add_option("--seed", t.seed, "Random seed")->capture_default_str();
    sub->add_option("--workers", t.workers, "Worker threads")->capture_default_str();
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("failed writing '" + path + "'");
}

/// Resolved value of every option of a subcommand, defaults included.
inline nlohmann::ordered_json resolved_options(const CLI::App* sub) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const CLI::Option* o : sub->get_options()) {
        const std::string name = o->get_single_name();
        if (name == "help" || name == "config") continue;
        if (o->get_expected_max() == 0) {
            j[name] = o->count() > 0 ? "true" : "false";
        } else if (o->count() > 0) {
            const auto& res = o->results();
            std::string v;
            for (std::size_t i = 0; i < res.size(); ++i) v += (i ? "," : "") + res[i];
            j[name] = v;
        } else {
            j[name] = o->get_default_str();
        }
    }
    return j;
}

/// `--config` file: either `key = value` lines ('#' comments and [section]
/// headers ignored) or a run manifest JSON, whose "config" object is replayed.
/// Keys are long option names without dashes. Values only fill options that
/// were not given on the command line.
inline std::vector<std::string> expand_config(CLI::App* sub, const std::vector<std::string>& args) {
    std::string path;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (path.empty()) return args;

    struct Entry {
        std::string key, value, where;
    };
    std::vector<Entry> entries;
    const std::string body = read_text_file(path);
    const bool manifest = text::trim(body).rfind('{', 0) == 0;
    if (manifest) {
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(body);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(path + ": " + e.what());
        }
        if (!j.contains("config") || !j["config"].is_object()) throw ConfigError(path + ": no \"config\" object");
        if (j.value("subcommand", sub->get_name()) != sub->get_name()) {
            throw ConfigError(path + ": manifest is for '" + j.value("subcommand", std::string()) + "'");
        }
        for (const auto& [k, v] : j["config"].items()) {
            entries.push_back({k, v.is_string() ? v.get<std::string>() : v.dump(), path + ": " + k});
        }
    } else {
        std::istringstream in(body);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            line = text::trim(line);
            if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
            const std::string where = path + ":" + std::to_string(lineno);
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
            std::string value = text::trim(line.substr(eq + 1));
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
            entries.push_back({text::trim(line.substr(0, eq)), value, where});
        }
    }

    auto given = [&](const std::string& key) {
        return std::any_of(rest.begin(), rest.end(), [&](const std::string& a) {
            return a == "--" + key || a.rfind("--" + key + "=", 0) == 0;
        });
    };
    std::vector<std::string> extra, positionals;
    for (const auto& e : entries) {
        const CLI::Option* opt = sub->get_option_no_throw("--" + e.key);
        if (!opt && manifest) {
            // positional arguments are recorded by name
            if (const CLI::Option* pos = sub->get_option_no_throw(e.key); pos && pos->get_positional()) {
                if (rest.size() <= 1) positionals.push_back(e.value);
                continue;
            }
        }
        if (!opt) throw ConfigError(e.where + ": unknown option '" + e.key + "'");
        if (given(e.key)) continue;
        // a manifest lists every default; replaying only the changed ones keeps
        // mutually exclusive options apart
        if (manifest && (e.value.empty() || e.value == opt->get_default_str())) continue;
        if (opt->get_expected_max() == 0) {
            if (e.value == "true" || e.value == "1" || e.value == "yes") extra.push_back("--" + e.key);
        } else {
            extra.push_back("--" + e.key);
            extra.push_back(e.value);
        }
    }
    rest.insert(rest.begin() + (rest.empty() ? 0 : 1), extra.begin(), extra.end());
    rest.insert(rest.end(), positionals.begin(), positionals.end());
    return rest;
}

inline void write_manifest(const CLI::App* sub, const std::string& output_path, std::uint64_t seed,
                           const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
    nlohmann::ordered_json m;
    m["tool"] = "extsum";
    m["version"] = EXTSUM_VERSION;
    m["subcommand"] = sub->get_name();
    m["seed"] = seed;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["config"] = resolved_options(sub);
    write_text_file(output_path + ".manifest.json", m.dump(2) + "\n");
}

inline Vocab vocab_for_training(const std::vector<Document>& docs, std::size_t max_size) {
    return build_vocab(docs, max_size);
}

struct TrainRun {
    TrainResult result;
    Vocab vocab;
    ModelConfig config;
};

inline TrainRun run_training(const std::vector<Document>& train_docs, const std::vector<Document>& val_docs,
                             const ModelOptions& mo, const TrainConfig& tc) {
    TrainRun run;
    run.vocab = vocab_for_training(train_docs, mo.vocab_size);
    run.config = mo.to_config(run.vocab.size());
    const std::size_t max_len = mo.effective_max_len(run.config);
    const auto train = prepare_examples(train_docs, run.vocab, max_len);
    const auto val = prepare_examples(val_docs, run.vocab, max_len);
    ModelParams params = init_model_params(run.config, tc.seed);
    run.result = train_loop(train, val, std::move(params), tc, run.config, run.vocab);
    return run;
}

inline std::string train_log_jsonl(const std::vector<TrainLogEntry>& log) {
    std::string out;
    for (const auto& e : log) {
        nlohmann::ordered_json j;
        j["step"] = e.step;
        j["train_loss"] = e.train_loss;
        if (e.val_loss) j["val_loss"] = *e.val_loss;
        j["timestamp"] = e.timestamp;
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace detail

/// Parse and dispatch. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Extractive summarization with a LoRA-adapted transformer sentence scorer", "extsum"};
    app.require_subcommand(1);
    app.set_version_flag("--version", EXTSUM_VERSION);
    std::string config_path;  // consumed by expand_config, declared for --help

    // label
    std::string label_in, label_out;
    std::size_t label_max = 0, label_workers = 1;
    auto* label = app.add_subcommand("label", "Add greedy oracle labels to a JSONL dataset");
    label->add_option("--in", label_in, "Input JSONL")->required();
    label->add_option("--out", label_out, "Output JSONL")->required();
    label->add_option("--max-sentences", label_max, "Cap on selected sentences (0 = unlimited)")->capture_default_str();
    label->add_option("--workers", label_workers, "Worker threads")->capture_default_str();
    label->add_option("--config", config_path, "Key-value configuration file");

    // train
    std::string train_in, train_val, train_out = "model.ckpt", train_log;
    ModelOptions train_model;
    TrainConfig train_cfg;
    auto* train = app.add_subcommand("train", "Train adapters and classifier head on labeled JSONL");
    train->add_option("--in,--data", train_in, "Labeled training JSONL")->required();
    train->add_option("--val", train_val, "Labeled validation JSONL (default: training data)");
    train->add_option("--out", train_out, "Checkpoint path")->capture_default_str();
    train->add_option("--log", train_log, "Training log JSONL (default: <out>.log.jsonl)");
    detail::add_model_options(train, train_model);
    detail::add_train_options(train, train_cfg);
    train->add_option("--config", config_path, "Key-value configuration file");

    // eval
    std::string eval_ckpt, eval_in, eval_out = "report.json", eval_hist, eval_selector = "model";
    std::size_t eval_k = 7, eval_bins = kDefaultBins, eval_max_len = 0, eval_workers = 1;
    bool eval_trigram = false;
    auto* eval = app.add_subcommand("eval", "Select sentences and score them with ROUGE");
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint (required for the model selector)");
    eval->add_option("--in", eval_in, "JSONL dataset with abstracts")->required();
    eval->add_option("--out", eval_out, "Report JSON")->capture_default_str();
    eval->add_option("--hist-out", eval_hist, "Histogram CSV (default: <out>.histogram.csv)");
    eval->add_option("--selector", eval_selector, "model, oracle or lead")
        ->check(CLI::IsMember({"model", "oracle", "lead"}))
        ->capture_default_str();
    eval->add_option("--k", eval_k, "Sentences selected per document")->capture_default_str();
    eval->add_option("--bins", eval_bins, "Relative-position histogram bins")->capture_default_str();
    eval->add_option("--max-len", eval_max_len, "Token budget per document (0 = runtime context)")->capture_default_str();
    eval->add_flag("--trigram-blocking", eval_trigram, "Skip sentences sharing a trigram with earlier picks")
        ->capture_default_str();
    eval->add_option("--workers", eval_workers, "Worker threads")->capture_default_str();
    eval->add_option("--config", config_path, "Key-value configuration file");

    // rouge
    std::string rouge_a, rouge_b, rouge_out;
    auto* rouge = app.add_subcommand("rouge", "ROUGE-1/2/L of a candidate text file against a reference");
    rouge->add_option("candidate", rouge_a, "Candidate text file")->required();
    rouge->add_option("reference", rouge_b, "Reference text file")->required();
    rouge->add_option("--out", rouge_out, "Also write the JSON here");
    rouge->add_option("--config", config_path, "Key-value configuration file");

    // analyze-positions
    std::string pos_in, pos_out;
    std::size_t pos_bins = kDefaultBins;
    auto* positions = app.add_subcommand("analyze-positions", "Relative-position histogram of selections as CSV");
    positions->add_option("--in", pos_in, "Eval report or selections JSON")->required();
    positions->add_option("--out", pos_out, "CSV path (default: stdout)");
    positions->add_option("--bins", pos_bins, "Number of bins")->capture_default_str();
    positions->add_option("--config", config_path, "Key-value configuration file");

    // gradcheck
    std::uint64_t gc_seed = 0;
    double gc_step = 1e-5, gc_tol = 1e-4;
    std::string gc_mode = "causal", gc_out;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the toy model's gradients");
    gradcheck->add_option("--seed", gc_seed, "Random seed")->capture_default_str();
    gradcheck->add_option("--step", gc_step, "Central-difference step h")->capture_default_str();
    gradcheck->add_option("--tolerance", gc_tol, "Maximum relative error")->capture_default_str();
    gradcheck->add_option("--attention-mode", gc_mode, "causal or bidirectional")
        ->check(CLI::IsMember({"causal", "bidirectional"}))
        ->capture_default_str();
    gradcheck->add_option("--out", gc_out, "Also write the JSON report here");
    gradcheck->add_option("--config", config_path, "Key-value configuration file");

    // sweep
    std::string sweep_in, sweep_eval, sweep_out = "sweep.csv";
    std::vector<double> sweep_fracs = {0.01, 0.05, 0.10, 1.0};
    std::size_t sweep_k = 7;
    ModelOptions sweep_model;
    TrainConfig sweep_cfg;
    auto* sweep = app.add_subcommand("sweep", "Train on data fractions and tabulate ROUGE-2");
    sweep->add_option("--in", sweep_in, "Labeled training JSONL")->required();
    sweep->add_option("--eval", sweep_eval, "Evaluation JSONL (default: --in)");
    sweep->add_option("--out", sweep_out, "CSV path")->capture_default_str();
    sweep->add_option("--fractions", sweep_fracs, "Comma-separated data fractions")
        ->delimiter(',')
        ->capture_default_str();
    sweep->add_option("--k", sweep_k, "Sentences selected per document")->capture_default_str();
    detail::add_model_options(sweep, sweep_model);
    detail::add_train_options(sweep, sweep_cfg);
    sweep->add_option("--config", config_path, "Key-value configuration file");

    try {
        std::vector<std::string> argv = args;
        if (!argv.empty()) {
            if (CLI::App* sub = app.get_subcommand_no_throw(argv[0])) argv = detail::expand_config(sub, argv);
        }
        std::reverse(argv.begin(), argv.end());
        app.parse(argv);
    } catch (const CLI::CallForHelp&) {
        out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << EXTSUM_VERSION << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitValidation;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        if (label->parsed()) {
            auto docs = load_jsonl(label_in);
            const std::size_t cap = label_max == 0 ? kUnlimited : label_max;
            std::vector<OracleLabels> labels(docs.size());
            parallel_for(docs.size(), label_workers, [&](std::size_t i) {
                try {
                    labels[i] = greedy_oracle(docs[i], cap);
                } catch (const ValidationError& e) {
                    throw ValidationError("document '" + docs[i].id + "': " + e.what());
                }
            });
            for (std::size_t i = 0; i < docs.size(); ++i) {
                docs[i].labels = labels[i].labels;
                docs[i].extra["oracle_score"] = labels[i].achieved_score;
            }
            save_jsonl(docs, label_out);
            detail::write_manifest(label, label_out, 0, {label_in}, {label_out});
            err << "labeled " << docs.size() << " documents -> " << label_out << "\n";
        } else if (train->parsed()) {
            const auto docs = load_jsonl(train_in);
            const auto val = train_val.empty() ? std::vector<Document>{} : load_jsonl(train_val);
            auto run = detail::run_training(docs, val, train_model, train_cfg);
            save_checkpoint(run.result.best, train_out);
            save_vocab(run.vocab, train_out + ".vocab.txt");
            const std::string log_path = train_log.empty() ? train_out + ".log.jsonl" : train_log;
            detail::write_text_file(log_path, detail::train_log_jsonl(run.result.log));
            detail::write_manifest(train, train_out, train_cfg.seed, {train_in},
                                   {train_out, train_out + ".vocab.txt", log_path});
            err << "trained " << run.result.steps << " steps on " << run.result.train_documents
                << " documents; best validation loss " << run.result.best.best_val_loss << " -> " << train_out << "\n";
        } else if (eval->parsed()) {
            const auto docs = load_jsonl(eval_in);
            Selector selector;
            std::optional<Checkpoint> ck;
            if (eval_selector == "model") {
                if (eval_ckpt.empty()) throw ConfigError("--checkpoint is required for the model selector");
                ck = load_checkpoint(eval_ckpt);
                const std::size_t max_len = eval_max_len == 0 ? ck->model_config.runtime_context
                                                              : std::min(eval_max_len, ck->model_config.runtime_context);
                const bool adapters = !ck->train_config.frozen;
                selector = [&, max_len, adapters](const Document& d) {
                    return model_selection(d, ck->vocab, ck->params, ck->model_config, max_len, eval_k, eval_trigram,
                                           adapters);
                };
            } else if (eval_selector == "oracle") {
                selector = [](const Document& d) { return label_selection(d); };
            } else {
                selector = [&](const Document& d) { return lead_k(d, eval_k); };
            }
            const auto report = evaluate_corpus(docs, selector, eval_workers);
            std::vector<SelectionResult> sels;
            std::vector<std::size_t> lengths;
            for (const auto& d : report.per_doc) {
                SelectionResult s;
                s.doc_id = d.doc_id;
                s.chosen_indices = d.chosen_indices;
                sels.push_back(std::move(s));
                lengths.push_back(d.n_sentences);
            }
            const auto hist = position_histogram(sels, lengths, eval_bins);
            const std::string hist_path = eval_hist.empty() ? eval_out + ".histogram.csv" : eval_hist;
            detail::write_text_file(eval_out, report_json(report, hist).dump(2) + "\n");
            detail::write_text_file(hist_path, histogram_csv(hist));
            std::vector<std::string> inputs{eval_in};
            if (!eval_ckpt.empty()) inputs.push_back(eval_ckpt);
            detail::write_manifest(eval, eval_out, 0, inputs, {eval_out, hist_path});
            if (report.skipped_empty_abstract) {
                err << "warning: skipped " << report.skipped_empty_abstract << " documents with an empty abstract\n";
            }
            err << "R1 " << round6(report.rouge1.f1) << "  R2 " << round6(report.rouge2.f1) << "  RL "
                << round6(report.rougeL.f1) << "\n";
        } else if (rouge->parsed()) {
            const auto scores = rouge_text(detail::read_text_file(rouge_a), detail::read_text_file(rouge_b));
            const std::string text = triple_json(scores).dump(2) + "\n";
            out << text;
            if (!rouge_out.empty()) {
                detail::write_text_file(rouge_out, text);
                detail::write_manifest(rouge, rouge_out, 0, {rouge_a, rouge_b}, {rouge_out});
            }
        } else if (positions->parsed()) {
            nlohmann::ordered_json j;
            try {
                j = nlohmann::ordered_json::parse(detail::read_text_file(pos_in));
            } catch (const nlohmann::json::parse_error& e) {
                throw ValidationError("'" + pos_in + "' is not valid JSON: " + e.what());
            }
            const auto [sels, lengths] = selections_from_json(j);
            const std::string csv = histogram_csv(position_histogram(sels, lengths, pos_bins));
            if (pos_out.empty()) {
                out << csv;
            } else {
                detail::write_text_file(pos_out, csv);
                detail::write_manifest(positions, pos_out, 0, {pos_in}, {pos_out});
            }
        } else if (gradcheck->parsed()) {
            const auto setup = synthetic::gradcheck_setup(gc_seed, parse_attention_mode(gc_mode));
            const auto rep = finite_diff_check(setup.example, setup.params, setup.config, gc_step, gc_tol);
            nlohmann::ordered_json j;
            j["passed"] = rep.passed;
            j["tolerance"] = rep.tolerance;
            j["step"] = gc_step;
            j["max_rel_error"] = rep.max_rel_error();
            j["tensors"] = nlohmann::ordered_json::array();
            for (const auto& t : rep.tensors) {
                j["tensors"].push_back(
                    {{"name", t.name}, {"scalars", t.scalars}, {"max_rel_error", t.max_rel_error}, {"non_finite", t.non_finite}});
            }
            const std::string text = j.dump(2) + "\n";
            out << text;
            if (!gc_out.empty()) {
                detail::write_text_file(gc_out, text);
                detail::write_manifest(gradcheck, gc_out, gc_seed, {}, {gc_out});
            }
            return rep.passed ? kExitOk : kExitValidation;
        } else if (sweep->parsed()) {
            const auto docs = load_jsonl(sweep_in);
            const auto eval_docs = sweep_eval.empty() ? docs : load_jsonl(sweep_eval);
            std::ostringstream csv;
            csv << "fraction,train_documents,rouge2_f1\n";
            for (const double frac : sweep_fracs) {
                TrainConfig tc = sweep_cfg;
                tc.data_fraction = frac;
                auto run = detail::run_training(docs, {}, sweep_model, tc);
                const auto& best = run.result.best;
                const std::size_t max_len = sweep_model.effective_max_len(run.config);
                const bool adapters = !tc.frozen;
                const auto report = evaluate_corpus(
                    eval_docs,
                    [&](const Document& d) {
                        return model_selection(d, run.vocab, best.params, run.config, max_len, sweep_k, false, adapters);
                    },
                    tc.workers);
                csv << frac << ',' << run.result.train_documents << ',' << round6(report.rouge2.f1) << '\n';
                err << "fraction " << frac << ": " << run.result.train_documents << " documents, R2 "
                    << round6(report.rouge2.f1) << "\n";
            }
            detail::write_text_file(sweep_out, csv.str());
            std::vector<std::string> inputs{sweep_in};
            if (!sweep_eval.empty()) inputs.push_back(sweep_eval);
            detail::write_manifest(sweep, sweep_out, sweep_cfg.seed, inputs, {sweep_out});
            out << csv.str();
        }
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitOk;
}

inline int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args);
}

}  // namespace extsum::cli
