#include "paraphrase/cli.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <limits>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "paraphrase/checkpoint.hpp"
#include "paraphrase/config.hpp"
#include "paraphrase/eval.hpp"
#include "paraphrase/toy.hpp"
#include "paraphrase/trainer.hpp"

namespace paraphrase {

namespace {

namespace fs = std::filesystem;

fs::path require_file(const std::string& key, const std::string& value) {
    if (value.empty()) throw ConfigError(key + " is not set");
    fs::path p = value;
    if (!fs::exists(p)) throw ConfigError(key + ": file not found: " + value);
    return p;
}

class Session {
public:
    Session(RunConfig config, std::ostream& out) : cfg_(std::move(config)), out_(out) {}

    void build_vocab() {
        std::vector<std::string> sentences = read_corpus_sentences(require_file("data.train", cfg_.train_path));
        if (!cfg_.mono_path.empty()) {
            auto mono = read_corpus_sentences(require_file("data.mono", cfg_.mono_path));
            sentences.insert(sentences.end(), mono.begin(), mono.end());
        }
        const int limit = cfg_.max_vocab == 0 ? std::numeric_limits<int>::max() : cfg_.max_vocab;
        const Vocab vocab = paraphrase::build_vocab(sentences, cfg_.min_freq, limit);
        const fs::path path = vocab_path();
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        vocab.save(path);
        out_ << "wrote " << path.string() << " (" << vocab.size() << " entries)\n";
    }

    void train_prior() {
        const Vocab vocab = load_vocab();
        const auto corpus = unlabelled(vocab);
        for (auto seed : cfg_.seeds) {
            ModelConfig mc = cfg_.prior_model;
            mc.vocab_size = vocab.size();
            mc.max_len = cfg_.max_len;
            PriorLM prior(mc, seed);
            PriorTrainConfig pc = cfg_.prior_train;
            pc.seed = seed;
            std::ofstream log = open_log(seed, "prior.jsonl");
            const PriorTrainReport report = paraphrase::train_prior(prior, corpus, pc, [&](int epoch, long step, double nll) {
                log << nlohmann::json{{"stage", "prior"}, {"epoch", epoch}, {"step", step}, {"nll", nll}, {"lr", pc.lr}}.dump()
                    << '\n';
            });
            Checkpoint ck;
            ck.parameters = prior.state();
            ck.meta.kind = "prior";
            ck.meta.stage = Stage::prior;
            ck.meta.epoch = report.best_epoch;
            ck.meta.validation_l2 = -std::log(report.best_perplexity);
            ck.meta.seed = seed;
            ck.meta.config = {{"model", to_json(mc)}, {"run", to_json(cfg_)}};
            for (double ppl : report.heldout_perplexity) ck.meta.history.push_back(-std::log(ppl));
            save_checkpoint(seed_dir(seed) / "prior.ckpt", ck);
            out_ << "seed " << seed << ": prior held-out perplexity " << report.best_perplexity << " (epoch "
                 << report.best_epoch << ")\n";
        }
    }

    void pretrain() {
        const Vocab vocab = load_vocab();
        const SemiSplit split = load_split(vocab, false);
        for (auto seed : cfg_.seeds) {
            SharedSeq2Seq model(model_config(vocab), seed);
            TrainConfig tc = cfg_.train;
            tc.seed = seed;
            std::ofstream log = open_log(seed, "pretrain.jsonl");
            TrainHooks hooks = logging_hooks(log);
            hooks.checkpoint_path = seed_dir(seed) / "pretrain.ckpt";
            TrainResult res = krl_pretrain(model, split, tc, hooks);
            out_ << "seed " << seed << ": best validation L2 " << res.best.meta.validation_l2 << " (epoch "
                 << res.best.meta.epoch << ")\n";
        }
    }

    void finetune() {
        const Vocab vocab = load_vocab();
        const SemiSplit split = load_split(vocab, true);
        for (auto seed : cfg_.seeds) {
            const fs::path init_path = seed_dir(seed) / "pretrain.ckpt";
            if (!fs::exists(init_path))
                throw ConfigError("missing " + init_path.string() +
                                  ": run the pretrain command (cmd_pretrain) with this config first");
            const Checkpoint init = load_checkpoint(init_path);
            std::unique_ptr<PriorLM> prior;
            if (cfg_.train.use_prior && cfg_.train.mode != TrainMode::ddl) {
                const fs::path prior_path = seed_dir(seed) / "prior.ckpt";
                if (!fs::exists(prior_path))
                    throw ConfigError("missing " + prior_path.string() +
                                      ": run the train-prior command (cmd_train_prior) first, or pass --no-prior");
                prior = load_prior(prior_path);
            }
            SharedSeq2Seq model(model_config_from_json(init.meta.config.at("model")), seed);
            TrainConfig tc = cfg_.train;
            tc.seed = seed;
            tc.max_epochs = cfg_.finetune_epochs;
            std::ofstream log = open_log(seed, "finetune.jsonl");
            TrainHooks hooks = logging_hooks(log);
            hooks.checkpoint_path = seed_dir(seed) / "finetune.ckpt";
            TrainResult res = krl_finetune(model, init, prior.get(), split, tc, hooks);
            out_ << "seed " << seed << ": best validation L2 " << res.best.meta.validation_l2 << " (epoch "
                 << res.best.meta.epoch << ", prior " << (tc.use_prior ? "on" : "off") << ")\n";
            if (tc.audit_pseudo_labels && !res.audit.clean())
                throw std::runtime_error("pseudo-label audit failed: " + std::to_string(res.audit.length_mismatches) +
                                         " length mismatches, " + std::to_string(res.audit.gradient_mismatches) +
                                         " gradient mismatches");
        }
    }

    void generate(const std::string& input, const std::string& output, const std::string& checkpoint) {
        const Vocab vocab = load_vocab();
        auto model = load_model(checkpoint);
        const auto sources = load_monolingual(require_file("--input", input), vocab, cfg_.max_len);
        std::string text;
        for (const auto& seq : model->greedy_decode(sources, cfg_.max_len)) text += decode_text(vocab, seq) + "\n";
        write_file_atomic(output, text);
        out_ << "wrote " << sources.size() << " paraphrases to " << output << "\n";
    }

    struct EvaluateArgs {
        std::string candidates, references, sources, checkpoint, json, table, scores;
        bool bounds = false;
    };

    void evaluate(const EvaluateArgs& a) {
        std::vector<EvalExample> examples;
        std::vector<Words> candidates;
        std::vector<double> per_example;
        MetricsReport report;
        if (!a.candidates.empty()) {
            // self-BLEU and i-BLEU need the sources, so all three files are required.
            const auto cand_lines = read_lines(require_file("--candidates", a.candidates));
            const auto ref_lines = read_lines(require_file("--references", a.references));
            const auto src_lines = read_lines(require_file("--sources", a.sources));
            if (cand_lines.size() != ref_lines.size() || src_lines.size() != cand_lines.size())
                throw ConfigError("misaligned inputs: " + std::to_string(cand_lines.size()) + " candidates, " +
                                  std::to_string(ref_lines.size()) + " reference lines, " +
                                  std::to_string(src_lines.size()) + " sources");
            std::vector<std::vector<Words>> refs;
            std::vector<Words> sources;
            for (std::size_t i = 0; i < cand_lines.size(); ++i) {
                candidates.push_back(tokenize(cand_lines[i]));
                std::vector<Words> r;
                std::stringstream ss(ref_lines[i]);
                std::string field;
                while (std::getline(ss, field, '\t')) r.push_back(tokenize(field));
                refs.push_back(r);
                sources.push_back(tokenize(src_lines[i]));
                examples.push_back({sources.back(), r});
            }
            report = compute_metrics(candidates, refs, sources, cfg_.eval_alpha);
            per_example = sentence_bleu(candidates, refs, 4);
        } else {
            const Vocab vocab = load_vocab();
            auto model = load_model(a.checkpoint);
            examples = examples_from_pairs(vocab, load_parallel_tsv(require_file("data.test", cfg_.test_path), vocab, cfg_.max_len));
            Evaluation ev = evaluate_checkpoint(*model, vocab, examples, cfg_.max_len, cfg_.eval_alpha);
            report = ev.report;
            per_example = ev.sentence_bleu4;
        }
        std::vector<std::pair<std::string, MetricsReport>> rows{{"model", report}};
        nlohmann::json j = {{"model", to_json(report)}};
        if (a.bounds) {
            const BoundRows b = bounds_rows(examples, cfg_.bounds_seed, cfg_.eval_alpha);
            rows.push_back({"upper (copy source)", b.upper});
            rows.push_back({"lower (random select)", b.lower});
            j["upper_bound"] = to_json(b.upper);
            j["lower_bound"] = to_json(b.lower);
        }
        const std::string table = metrics_table(rows);
        out_ << table;
        if (!a.json.empty()) write_file_atomic(a.json, j.dump(2) + "\n");
        if (!a.table.empty()) write_file_atomic(a.table, table);
        if (!a.scores.empty()) {
            std::ostringstream ss;
            ss.precision(17);
            for (double v : per_example) ss << v << '\n';
            write_file_atomic(a.scores, ss.str());
        }
    }

    void compare(const std::string& a, const std::string& b) {
        const auto xs = read_scores(a);
        const auto ys = read_scores(b);
        if (xs.size() != ys.size())
            throw ConfigError("misaligned score files: " + std::to_string(xs.size()) + " vs " + std::to_string(ys.size()));
        double mean_a = 0.0, mean_b = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            mean_a += xs[i] / static_cast<double>(xs.size());
            mean_b += ys[i] / static_cast<double>(ys.size());
        }
        const double p = wilcoxon_signed_rank(xs, ys);
        out_ << nlohmann::json{{"n", xs.size()}, {"mean_a", mean_a}, {"mean_b", mean_b}, {"p_value", p}}.dump() << "\n";
    }

private:
    fs::path vocab_path() const {
        return cfg_.vocab_path.empty() ? fs::path(cfg_.run_dir) / "vocab.txt" : fs::path(cfg_.vocab_path);
    }

    fs::path seed_dir(std::uint64_t seed) const { return fs::path(cfg_.run_dir) / ("seed-" + std::to_string(seed)); }

    Vocab load_vocab() const {
        const fs::path p = vocab_path();
        if (!fs::exists(p)) throw ConfigError("missing vocabulary " + p.string() + ": run the build-vocab command first");
        return Vocab::load(p);
    }

    ModelConfig model_config(const Vocab& vocab) const {
        ModelConfig mc = cfg_.model;
        mc.vocab_size = vocab.size();
        mc.max_len = cfg_.max_len;
        return mc;
    }

    std::vector<TokenSequence> unlabelled(const Vocab& vocab) const {
        if (!cfg_.mono_path.empty()) return load_monolingual(require_file("data.mono", cfg_.mono_path), vocab, cfg_.max_len);
        return sources_of(load_parallel_tsv(require_file("data.train", cfg_.train_path), vocab, cfg_.max_len));
    }

    SemiSplit load_split(const Vocab& vocab, bool with_unlabelled) const {
        SemiSplit s;
        s.labelled = load_parallel_tsv(require_file("data.train", cfg_.train_path), vocab, cfg_.max_len);
        s.val = load_parallel_tsv(require_file("data.val", cfg_.val_path), vocab, cfg_.max_len);
        if (with_unlabelled) s.unlabelled = unlabelled(vocab);
        return s;
    }

    std::ofstream open_log(std::uint64_t seed, const std::string& name) const {
        fs::create_directories(seed_dir(seed));
        std::ofstream log(seed_dir(seed) / name, std::ios::trunc);
        if (!log) throw std::runtime_error("cannot write log in " + seed_dir(seed).string());
        return log;
    }

    TrainHooks logging_hooks(std::ofstream& log) {
        TrainHooks hooks;
        hooks.on_step = [&log](const StepRecord& r) { log << to_json(r).dump() << '\n'; };
        hooks.on_epoch = [this](int epoch, double l2) { out_ << "  epoch " << epoch << " validation L2 " << l2 << "\n"; };
        return hooks;
    }

    std::unique_ptr<PriorLM> load_prior(const fs::path& path) const {
        const Checkpoint ck = load_checkpoint(path);
        if (ck.meta.kind != "prior") throw ConfigError(path.string() + " is not a prior checkpoint");
        auto prior = std::make_unique<PriorLM>(model_config_from_json(ck.meta.config.at("model")), ck.meta.seed);
        prior->load_state(ck.parameters);
        prior->set_trained(true);
        return prior;
    }

    std::unique_ptr<SharedSeq2Seq> load_model(const std::string& explicit_path) const {
        fs::path path = explicit_path;
        if (path.empty()) {
            const fs::path dir = seed_dir(cfg_.seeds.front());
            path = fs::exists(dir / "finetune.ckpt") ? dir / "finetune.ckpt" : dir / "pretrain.ckpt";
        }
        if (!fs::exists(path)) throw ConfigError("missing checkpoint " + path.string() + ": train a model first");
        const Checkpoint ck = load_checkpoint(path);
        if (ck.meta.kind != "model") throw ConfigError(path.string() + " is not a paraphrase model checkpoint");
        auto model = std::make_unique<SharedSeq2Seq>(model_config_from_json(ck.meta.config.at("model")), ck.meta.seed);
        model->load_state(ck.parameters);
        return model;
    }

    static std::vector<double> read_scores(const std::string& path) {
        std::vector<double> out;
        int line_no = 0;
        for (const auto& line : read_lines(require_file("--compare", path))) {
            ++line_no;
            try {
                std::size_t used = 0;
                out.push_back(std::stod(line, &used));
                if (used != line.size()) throw std::invalid_argument(line);
            } catch (const std::exception&) {
                throw ConfigError(path + ":" + std::to_string(line_no) + ": not a number");
            }
        }
        return out;
    }

    RunConfig cfg_;
    std::ostream& out_;
};

void make_toy(const fs::path& dir, int labelled, int unlabelled, int val, int test, std::uint64_t seed, std::ostream& out) {
    if (labelled < 1 || unlabelled < labelled || val < 1 || test < 1)
        throw ConfigError("make-toy needs 1 <= labelled <= unlabelled and positive val/test sizes");
    const ToyLanguage lang{ToyConfig{}};
    const auto corpus = make_toy_corpus(lang, unlabelled + val + test, seed);
    auto write_pairs = [&](const std::string& name, std::size_t begin, std::size_t end) {
        std::string text;
        for (std::size_t i = begin; i < end; ++i) text += corpus[i].first + "\t" + corpus[i].second + "\n";
        write_file_atomic(dir / name, text);
    };
    const std::size_t v = static_cast<std::size_t>(val), t = static_cast<std::size_t>(test);
    write_pairs("val.tsv", 0, v);
    write_pairs("test.tsv", v, v + t);
    write_pairs("train.tsv", v + t, v + t + static_cast<std::size_t>(labelled));
    std::string mono;
    for (std::size_t i = v + t; i < corpus.size(); ++i) mono += corpus[i].first + "\n";
    write_file_atomic(dir / "mono.txt", mono);
    write_file_atomic(dir / "toy.conf",
                      "# Toy synonym-substitution task; paths are relative to this file.\n"
                      "[data]\ntrain = train.tsv\nval = val.tsv\ntest = test.tsv\nmono = mono.txt\nvocab = vocab.txt\n"
                      "[run]\ndir = runs\nseeds = 1000\n"
                      "[model]\nlayers = 2\nhidden = 128\nheads = 4\nffn_mult = 2\ndropout = 0.0\n"
                      "[prior]\nlayers = 2\nhidden = 64\nheads = 4\nffn_mult = 2\ndropout = 0.0\nepochs = 5\n"
                      "[train]\nlr = 0.002\nbatch_size = 32\nmax_epochs = 5\nfinetune_epochs = 2\n"
                      "[sampler]\ntop_k = 10\n");
    out << "wrote toy task to " << dir.string() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Paraphrase generation with dual-direction and variational semi-supervised training"};
    app.name(args.empty() ? "paraphrase" : args.front());
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "INI-style config file (see docs/config.md)");
    std::map<std::string, std::string> overrides;
    for (const auto& key : config_keys())
        app.add_option_function<std::string>("--" + key.name, [&overrides, name = key.name](const std::string& v) { overrides[name] = v; },
                                             key.help)
            ->group("Config overrides");

    app.add_subcommand("build-vocab", "build the vocabulary from the training (and unlabelled) text");
    app.add_subcommand("train-prior", "train the language-model prior on unlabelled sentences");
    app.add_subcommand("pretrain", "dual-direction supervised pre-training with validation selection");
    auto* finetune = app.add_subcommand("finetune", "joint supervised + variational fine-tuning from the pretrained model");
    bool no_prior = false;
    finetune->add_flag("--no-prior", no_prior, "drop the KL term (reconstruction-only unsupervised objective)");

    auto* generate = app.add_subcommand("generate", "greedy paraphrases for each input line");
    std::string gen_input, gen_output, gen_checkpoint;
    generate->add_option("--input", gen_input, "one sentence per line")->required();
    generate->add_option("--output", gen_output, "output file")->required();
    generate->add_option("--checkpoint", gen_checkpoint, "model checkpoint (default: latest for the first seed)");

    auto* evaluate = app.add_subcommand("evaluate", "BLEU / i-BLEU / ROUGE metrics and paired significance tests");
    Session::EvaluateArgs ea;
    std::vector<std::string> compare;
    evaluate->add_option("--candidates", ea.candidates, "candidate file, one per line");
    evaluate->add_option("--references", ea.references, "references, tab-separated alternatives per line");
    evaluate->add_option("--sources", ea.sources, "source file for self-BLEU");
    evaluate->add_option("--checkpoint", ea.checkpoint, "decode data.test with this checkpoint");
    evaluate->add_option("--json", ea.json, "write the metrics report as JSON");
    evaluate->add_option("--table", ea.table, "write the metrics table");
    evaluate->add_option("--scores", ea.scores, "write per-example sentence BLEU-4");
    evaluate->add_flag("--bounds", ea.bounds, "add copy-source and random-select rows");
    evaluate->add_option("--compare", compare, "Wilcoxon test between two per-example score files")->expected(2);

    auto* toy = app.add_subcommand("make-toy", "write the synthetic synonym-substitution task");
    std::string toy_dir;
    int toy_labelled = 200, toy_unlabelled = 2000, toy_val = 200, toy_test = 400;
    std::uint64_t toy_seed = 7;
    toy->add_option("--output-dir", toy_dir, "destination directory")->required();
    toy->add_option("--labelled", toy_labelled, "labelled training pairs");
    toy->add_option("--unlabelled", toy_unlabelled, "unlabelled sources (the labelled ones are a prefix)");
    toy->add_option("--val", toy_val, "validation pairs");
    toy->add_option("--test", toy_test, "test pairs");
    toy->add_option("--seed", toy_seed, "generator seed");

    try {
        std::vector<std::string> rest(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
        app.parse(rest);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ExtrasError& e) {
        err << "error: " << e.what() << " (unknown option or config key; see docs/config.md)\n";
        return 2;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (toy->parsed()) {
            make_toy(toy_dir, toy_labelled, toy_unlabelled, toy_val, toy_test, toy_seed, out);
            return 0;
        }
        RunConfig cfg;
        if (!config_path.empty()) apply_settings(cfg, read_config_file(config_path));
        apply_settings(cfg, overrides);
        if (no_prior) cfg.train.use_prior = false;
        cfg.validate();
        Session session(cfg, out);
        if (app.got_subcommand("build-vocab")) session.build_vocab();
        if (app.got_subcommand("train-prior")) session.train_prior();
        if (app.got_subcommand("pretrain")) session.pretrain();
        if (finetune->parsed()) session.finetune();
        if (generate->parsed()) session.generate(gen_input, gen_output, gen_checkpoint);
        if (evaluate->parsed()) {
            if (!compare.empty())
                session.compare(compare[0], compare[1]);
            else
                session.evaluate(ea);
        }
        return 0;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace paraphrase
