#include "paraphrase/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

namespace paraphrase {

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || text.empty())
        throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "on" || text == "1") return true;
    if (text == "false" || text == "off" || text == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false or on/off, got '" + text + "'");
}

std::string show(double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
}

ConfigKey text_key(std::string name, std::string help, std::string RunConfig::*field) {
    return {std::move(name), std::move(help), [field](RunConfig& c, const std::string& v) { c.*field = v; },
            [field](const RunConfig& c) { return c.*field; }};
}

template <class T, class Owner>
ConfigKey number_key(std::string name, std::string help, std::function<Owner&(RunConfig&)> owner, T Owner::*field) {
    auto get_owner = [owner](const RunConfig& c) -> const Owner& { return owner(const_cast<RunConfig&>(c)); };
    return {name, std::move(help),
            [owner, field, name](RunConfig& c, const std::string& v) { owner(c).*field = parse_number<T>(name, v); },
            [get_owner, field](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>)
                    return show(get_owner(c).*field);
                else
                    return std::to_string(get_owner(c).*field);
            }};
}

template <class Owner>
ConfigKey bool_key(std::string name, std::string help, std::function<Owner&(RunConfig&)> owner, bool Owner::*field,
                   const char* yes = "true", const char* no = "false") {
    return {name, std::move(help), [owner, field, name](RunConfig& c, const std::string& v) { owner(c).*field = parse_bool(name, v); },
            [owner, field, yes, no](const RunConfig& c) {
                return std::string(owner(const_cast<RunConfig&>(c)).*field ? yes : no);
            }};
}

RunConfig& self(RunConfig& c) { return c; }
ModelConfig& model(RunConfig& c) { return c.model; }
ModelConfig& prior_model(RunConfig& c) { return c.prior_model; }
PriorTrainConfig& prior_train(RunConfig& c) { return c.prior_train; }
TrainConfig& train(RunConfig& c) { return c.train; }
TemperatureSchedule& temperature(RunConfig& c) { return c.train.temperature; }

std::vector<ConfigKey> build_keys() {
    using R = std::function<RunConfig&(RunConfig&)>;
    using M = std::function<ModelConfig&(RunConfig&)>;
    using P = std::function<PriorTrainConfig&(RunConfig&)>;
    using T = std::function<TrainConfig&(RunConfig&)>;
    using S = std::function<TemperatureSchedule&(RunConfig&)>;
    std::vector<ConfigKey> k;
    k.push_back(text_key("data.train", "labelled pairs, TSV: source<TAB>paraphrase", &RunConfig::train_path));
    k.push_back(text_key("data.val", "validation pairs, TSV", &RunConfig::val_path));
    k.push_back(text_key("data.test", "test pairs, TSV", &RunConfig::test_path));
    k.push_back(text_key("data.mono", "unlabelled source sentences, one per line", &RunConfig::mono_path));
    k.push_back(text_key("data.vocab", "vocabulary file written by build-vocab", &RunConfig::vocab_path));
    k.push_back(number_key("data.min_freq", "minimum token count for the vocabulary", R(self), &RunConfig::min_freq));
    k.push_back(number_key("data.max_vocab", "vocabulary word limit, 0 for none", R(self), &RunConfig::max_vocab));
    k.push_back(number_key("data.max_len", "maximum tokens per sequence including BOS and EOS", R(self), &RunConfig::max_len));
    k.push_back(text_key("run.dir", "output directory for checkpoints and logs", &RunConfig::run_dir));
    k.push_back({"run.seeds", "comma-separated seeds; training commands run each",
                 [](RunConfig& c, const std::string& v) {
                     c.seeds.clear();
                     std::stringstream ss(v);
                     std::string item;
                     while (std::getline(ss, item, ',')) {
                         item.erase(0, item.find_first_not_of(' '));
                         item.erase(item.find_last_not_of(' ') + 1);
                         if (!item.empty()) c.seeds.push_back(parse_number<std::uint64_t>("run.seeds", item));
                     }
                 },
                 [](const RunConfig& c) {
                     std::string out;
                     for (auto s : c.seeds) out += (out.empty() ? "" : ",") + std::to_string(s);
                     return out;
                 }});
    k.push_back(number_key("model.layers", "encoder and decoder layers", M(model), &ModelConfig::layers));
    k.push_back(number_key("model.hidden", "model width", M(model), &ModelConfig::hidden));
    k.push_back(number_key("model.heads", "attention heads", M(model), &ModelConfig::heads));
    k.push_back(number_key("model.ffn_mult", "feed-forward width as a multiple of model.hidden", M(model), &ModelConfig::ffn_mult));
    k.push_back(number_key("model.dropout", "dropout rate during training", M(model), &ModelConfig::dropout));
    k.push_back(number_key("prior.layers", "language-model prior layers", M(prior_model), &ModelConfig::layers));
    k.push_back(number_key("prior.hidden", "prior width", M(prior_model), &ModelConfig::hidden));
    k.push_back(number_key("prior.heads", "prior attention heads", M(prior_model), &ModelConfig::heads));
    k.push_back(number_key("prior.ffn_mult", "prior feed-forward multiple", M(prior_model), &ModelConfig::ffn_mult));
    k.push_back(number_key("prior.dropout", "prior dropout rate", M(prior_model), &ModelConfig::dropout));
    k.push_back(number_key("prior.lr", "prior Adam learning rate", P(prior_train), &PriorTrainConfig::lr));
    k.push_back(number_key("prior.epochs", "prior training epochs", P(prior_train), &PriorTrainConfig::epochs));
    k.push_back(number_key("prior.batch_size", "prior minibatch size", P(prior_train), &PriorTrainConfig::batch_size));
    k.push_back(number_key("prior.clip_norm", "prior gradient clipping norm", P(prior_train), &PriorTrainConfig::clip_norm));
    k.push_back(number_key("prior.heldout_fraction", "share of the unlabelled corpus held out for prior selection",
                           P(prior_train), &PriorTrainConfig::heldout_fraction));
    k.push_back(number_key("train.lr", "Adam learning rate", T(train), &TrainConfig::lr));
    k.push_back(number_key("train.adam_beta1", "Adam beta1", T(train), &TrainConfig::adam_beta1));
    k.push_back(number_key("train.adam_beta2", "Adam beta2", T(train), &TrainConfig::adam_beta2));
    k.push_back(number_key("train.adam_eps", "Adam epsilon", T(train), &TrainConfig::adam_eps));
    k.push_back(number_key("train.batch_size", "minibatch size (pairs or sources)", T(train), &TrainConfig::batch_size));
    k.push_back(number_key("train.max_epochs", "pre-training epochs", T(train), &TrainConfig::max_epochs));
    k.push_back(number_key("train.finetune_epochs", "fine-tuning epochs", R(self), &RunConfig::finetune_epochs));
    k.push_back(number_key("train.clip_norm", "global gradient norm limit, 0 disables", T(train), &TrainConfig::clip_norm));
    k.push_back(bool_key("train.dual", "train both directions (false: s->t only baseline)", T(train), &TrainConfig::dual));
    k.push_back({"train.mode", "fine-tuning updates: semi (DDL then VSAR), ddl or vsar",
                 [](RunConfig& c, const std::string& v) {
                     try {
                         c.train.mode = parse_train_mode(v);
                     } catch (const std::invalid_argument& e) {
                         throw ConfigError(std::string("config key 'train.mode': ") + e.what());
                     }
                 },
                 [](const RunConfig& c) { return to_string(c.train.mode); }});
    k.push_back(bool_key("train.prior", "use the language-model prior in the VSAR KL term", T(train), &TrainConfig::use_prior,
                         "on", "off"));
    k.push_back(bool_key("train.audit_pseudo_labels", "check pseudo-label lengths and detachment every VSAR step", T(train),
                         &TrainConfig::audit_pseudo_labels));
    k.push_back(number_key("sampler.top_k", "Gumbel-TOP-k candidates per latent position", T(train), &TrainConfig::top_k));
    k.push_back({"sampler.temperature", "annealed (geometric start -> end over the stage) or fixed",
                 [](RunConfig& c, const std::string& v) {
                     try {
                         c.train.temperature.mode = parse_temperature_mode(v);
                     } catch (const std::invalid_argument& e) {
                         throw ConfigError(std::string("config key 'sampler.temperature': ") + e.what());
                     }
                 },
                 [](const RunConfig& c) { return to_string(c.train.temperature.mode); }});
    k.push_back(number_key("sampler.tau_fixed", "temperature in fixed mode", S(temperature), &TemperatureSchedule::fixed_value));
    k.push_back(number_key("sampler.tau_start", "annealing start temperature", S(temperature), &TemperatureSchedule::start));
    k.push_back(number_key("sampler.tau_end", "annealing end temperature", S(temperature), &TemperatureSchedule::end));
    k.push_back(number_key("eval.alpha", "i-BLEU weight on BLEU-4", R(self), &RunConfig::eval_alpha));
    k.push_back(number_key("eval.bounds_seed", "seed of the random-select bound row", R(self), &RunConfig::bounds_seed));
    return k;
}

const std::set<std::string> kPathKeys{"data.train", "data.val", "data.test", "data.mono", "data.vocab", "run.dir"};

}  // namespace

RunConfig::RunConfig() {
    prior_model.layers = 2;
}

void RunConfig::validate() const {
    auto check = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    check(min_freq >= 1, "data.min_freq must be >= 1");
    check(max_vocab >= 0, "data.max_vocab must be >= 0");
    check(max_len >= 2, "data.max_len must be >= 2");
    check(!seeds.empty(), "run.seeds must list at least one seed");
    check(finetune_epochs >= 1, "train.finetune_epochs must be >= 1");
    check(eval_alpha >= 0.0 && eval_alpha <= 1.0, "eval.alpha must lie in [0, 1]");
    check(prior_train.epochs >= 1 && prior_train.batch_size >= 1, "prior.epochs and prior.batch_size must be >= 1");
    check(prior_train.lr > 0.0, "prior.lr must be > 0");
    check(prior_train.heldout_fraction >= 0.0 && prior_train.heldout_fraction < 1.0, "prior.heldout_fraction must be in [0, 1)");
    try {
        ModelConfig m = model, p = prior_model;
        m.vocab_size = p.vocab_size = kNumSpecial + 1;
        m.max_len = p.max_len = max_len;
        m.validate();
        p.validate();
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

void apply_settings(RunConfig& config, const std::map<std::string, std::string>& settings) {
    for (const auto& [name, value] : settings) {
        const auto& keys = config_keys();
        auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == name; });
        if (it == keys.end()) throw ConfigError("unknown config key '" + name + "' (see docs/config.md)");
        it->set(config, value);
    }
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigINI().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    std::map<std::string, std::string> out;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;  // section markers
        std::string value;
        for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
        const std::string key = item.fullname();
        if (kPathKeys.count(key) && !value.empty() && std::filesystem::path(value).is_relative())
            value = (path.parent_path() / value).lexically_normal().string();
        out[key] = value;
    }
    return out;
}

nlohmann::json to_json(const RunConfig& config) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& k : config_keys()) j[k.name] = k.get(config);
    return j;
}

}  // namespace paraphrase
