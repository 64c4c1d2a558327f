#include "mce/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace mce {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::string& field) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(field + ": cannot parse '" + s + "' as a number");
    }
}

long parse_long(const std::string& s, const std::string& field) {
    try {
        size_t pos = 0;
        long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(field + ": cannot parse '" + s + "' as an integer");
    }
}

bool parse_bool(const std::string& s, const std::string& field) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError(field + ": expected true or false, got '" + s + "'");
}

std::vector<double> parse_double_list(const std::string& s, const std::string& field) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(trim(item), field));
    return out;
}

ConfigText ConfigText::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
}

ConfigText ConfigText::parse_text(const std::string& text) {
    ConfigText cfg;
    std::stringstream ss(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) {
                throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
            }
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        if (section.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": key '" + key + "' appears before any [section]");
        }
        cfg.entries_[{section, key}] = value;
    }
    return cfg;
}

void ConfigText::set(const std::string& spec) {
    size_t eq = spec.find('=');
    size_t dot = spec.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("override '" + spec + "': expected section.key=value");
    }
    std::string section = trim(spec.substr(0, dot));
    std::string key = trim(spec.substr(dot + 1, eq - dot - 1));
    std::string value = trim(spec.substr(eq + 1));
    if (section.empty() || key.empty()) {
        throw ConfigError("override '" + spec + "': expected section.key=value");
    }
    entries_[{section, key}] = value;
}

bool ConfigText::has(const std::string& section, const std::string& key) const {
    return entries_.count({section, key}) > 0;
}

std::string ConfigText::get(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
    auto it = entries_.find({section, key});
    return it == entries_.end() ? fallback : it->second;
}

ExperimentConfig ExperimentConfig::defaults() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::from(const ConfigText& text) {
    ExperimentConfig cfg;
    std::set<std::pair<std::string, std::string>> known;
    auto read = [&](const std::string& section, const std::string& key, auto&& apply) {
        known.insert({section, key});
        if (text.has(section, key)) apply(text.get(section, key, ""), section + "." + key);
    };

    read("data", "modalities", [&](const std::string& v, const std::string& f) {
        cfg.data.modalities = static_cast<int>(parse_long(v, f));
    });
    read("data", "classes", [&](const std::string& v, const std::string& f) {
        cfg.data.classes = static_cast<int>(parse_long(v, f));
    });
    read("data", "input_dim", [&](const std::string& v, const std::string& f) {
        cfg.data.input_dim = static_cast<int>(parse_long(v, f));
    });
    read("data", "samples_train", [&](const std::string& v, const std::string& f) {
        cfg.data.samples = static_cast<int>(parse_long(v, f));
    });
    read("data", "samples_test", [&](const std::string& v, const std::string& f) {
        cfg.samples_test = static_cast<int>(parse_long(v, f));
    });
    read("data", "snr", [&](const std::string& v, const std::string& f) {
        cfg.data.snr = parse_double_list(v, f);
    });
    read("data", "missing_rates", [&](const std::string& v, const std::string& f) {
        cfg.data.missing_rates = parse_double_list(v, f);
    });
    read("data", "centroid_scale", [&](const std::string& v, const std::string& f) {
        cfg.data.centroid_scale = parse_double(v, f);
    });
    read("data", "seed", [&](const std::string& v, const std::string& f) {
        cfg.data.seed = static_cast<uint64_t>(parse_long(v, f));
    });

    read("model", "feature_dim", [&](const std::string& v, const std::string& f) {
        cfg.model.feature_dim = static_cast<int>(parse_long(v, f));
    });
    read("model", "heads", [&](const std::string& v, const std::string& f) {
        cfg.model.heads = static_cast<int>(parse_long(v, f));
    });
    read("model", "ffn_dim", [&](const std::string& v, const std::string& f) {
        cfg.model.ffn_dim = static_cast<int>(parse_long(v, f));
    });
    read("model", "pos_sigma", [&](const std::string& v, const std::string& f) {
        cfg.model.pos_sigma = parse_double(v, f);
    });

    read("train", "epochs", [&](const std::string& v, const std::string& f) {
        cfg.train.epochs = static_cast<int>(parse_long(v, f));
    });
    read("train", "batch_size", [&](const std::string& v, const std::string& f) {
        cfg.train.batch_size = static_cast<int>(parse_long(v, f));
    });
    read("train", "learning_rate", [&](const std::string& v, const std::string& f) {
        cfg.train.learning_rate = parse_double(v, f);
    });
    read("train", "optimizer", [&](const std::string& v, const std::string&) {
        cfg.train.optimizer = optimizer_kind_from(v);
    });
    read("train", "lambda_single", [&](const std::string& v, const std::string& f) {
        cfg.train.lambdas.single = parse_double(v, f);
    });
    read("train", "lambda_sub", [&](const std::string& v, const std::string& f) {
        cfg.train.lambdas.sub = parse_double(v, f);
    });
    read("train", "lambda_aux", [&](const std::string& v, const std::string& f) {
        cfg.train.lambdas.aux = parse_double(v, f);
    });
    read("train", "epsilon", [&](const std::string& v, const std::string& f) {
        cfg.train.epsilon = parse_double(v, f);
    });
    read("train", "mc_permutations", [&](const std::string& v, const std::string& f) {
        cfg.train.mc_permutations = static_cast<int>(parse_long(v, f));
    });
    read("train", "exact_threshold", [&](const std::string& v, const std::string& f) {
        cfg.train.exact_threshold = static_cast<int>(parse_long(v, f));
    });
    read("train", "subset_cap", [&](const std::string& v, const std::string& f) {
        cfg.train.subset_cap = static_cast<int>(parse_long(v, f));
    });
    read("train", "use_factor_a", [&](const std::string& v, const std::string& f) {
        cfg.train.use_factor_a = parse_bool(v, f);
    });
    read("train", "use_factor_b", [&](const std::string& v, const std::string& f) {
        cfg.train.use_factor_b = parse_bool(v, f);
    });
    read("train", "soft_value", [&](const std::string& v, const std::string& f) {
        cfg.train.soft_value = parse_bool(v, f);
    });
    read("train", "aux_norm", [&](const std::string& v, const std::string& f) {
        if (v == "mse") {
            cfg.train.aux_norm = RowNorm::kMse;
        } else if (v == "l2") {
            cfg.train.aux_norm = RowNorm::kL2;
        } else {
            throw ConfigError(f + ": expected mse or l2, got '" + v + "'");
        }
    });
    read("train", "seed", [&](const std::string& v, const std::string& f) {
        cfg.train.seed = static_cast<uint64_t>(parse_long(v, f));
    });
    read("train", "pretrain_epochs", [&](const std::string& v, const std::string& f) {
        cfg.train.pretrain_epochs = static_cast<int>(parse_long(v, f));
    });
    read("train", "pretrain_learning_rate", [&](const std::string& v, const std::string& f) {
        cfg.train.pretrain_learning_rate = parse_double(v, f);
    });
    read("train", "probe_epochs", [&](const std::string& v, const std::string& f) {
        cfg.train.probe_epochs = static_cast<int>(parse_long(v, f));
    });
    read("train", "eval_every", [&](const std::string& v, const std::string& f) {
        cfg.train.eval_every = static_cast<int>(parse_long(v, f));
    });
    read("train", "probe_every", [&](const std::string& v, const std::string& f) {
        cfg.train.probe_every = static_cast<int>(parse_long(v, f));
    });
    read("train", "probe_at_end", [&](const std::string& v, const std::string& f) {
        cfg.train.probe_at_end = parse_bool(v, f);
    });

    for (const auto& [sk, value] : text.entries()) {
        if (!known.count(sk)) {
            throw ConfigError("unknown config key " + sk.first + "." + sk.second);
        }
    }

    cfg.validate();
    return cfg;
}

void ExperimentConfig::validate() const {
    data.validate();
    if (samples_test < 1) throw ConfigError("data.samples_test: need >= 1");
    // The model mirrors the data dimensions by construction.
    ModelConfig mc = model;
    mc.modalities = data.modalities;
    mc.classes = data.classes;
    mc.input_dim = data.input_dim;
    mc.validate();
    train.validate();
}

std::string ExperimentConfig::canonical_text() const {
    std::ostringstream os;
    os << "[data]\n";
    os << "modalities = " << data.modalities << "\n";
    os << "classes = " << data.classes << "\n";
    os << "input_dim = " << data.input_dim << "\n";
    os << "samples_train = " << data.samples << "\n";
    os << "samples_test = " << samples_test << "\n";
    os << "snr = ";
    for (size_t i = 0; i < data.snr.size(); ++i) os << (i ? "," : "") << format_double(data.snr[i]);
    os << "\n";
    os << "missing_rates = ";
    for (size_t i = 0; i < data.missing_rates.size(); ++i) {
        os << (i ? "," : "") << format_double(data.missing_rates[i]);
    }
    os << "\n";
    os << "centroid_scale = " << format_double(data.centroid_scale) << "\n";
    os << "seed = " << data.seed << "\n";
    os << "[model]\n";
    os << "feature_dim = " << model.feature_dim << "\n";
    os << "heads = " << model.heads << "\n";
    os << "ffn_dim = " << model.ffn_dim << "\n";
    os << "pos_sigma = " << format_double(model.pos_sigma) << "\n";
    os << "[train]\n";
    os << "epochs = " << train.epochs << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "learning_rate = " << format_double(train.learning_rate) << "\n";
    os << "optimizer = " << to_string(train.optimizer) << "\n";
    os << "lambda_single = " << format_double(train.lambdas.single) << "\n";
    os << "lambda_sub = " << format_double(train.lambdas.sub) << "\n";
    os << "lambda_aux = " << format_double(train.lambdas.aux) << "\n";
    os << "epsilon = " << format_double(train.epsilon) << "\n";
    os << "mc_permutations = " << train.mc_permutations << "\n";
    os << "exact_threshold = " << train.exact_threshold << "\n";
    os << "subset_cap = " << train.subset_cap << "\n";
    os << "use_factor_a = " << (train.use_factor_a ? "true" : "false") << "\n";
    os << "use_factor_b = " << (train.use_factor_b ? "true" : "false") << "\n";
    os << "soft_value = " << (train.soft_value ? "true" : "false") << "\n";
    os << "aux_norm = " << (train.aux_norm == RowNorm::kMse ? "mse" : "l2") << "\n";
    os << "seed = " << train.seed << "\n";
    os << "pretrain_epochs = " << train.pretrain_epochs << "\n";
    os << "pretrain_learning_rate = " << format_double(train.pretrain_learning_rate) << "\n";
    os << "probe_epochs = " << train.probe_epochs << "\n";
    os << "eval_every = " << train.eval_every << "\n";
    os << "probe_every = " << train.probe_every << "\n";
    os << "probe_at_end = " << (train.probe_at_end ? "true" : "false") << "\n";
    return os.str();
}

std::string ExperimentConfig::hash_hex() const {
    uint64_t h = fnv1a64(canonical_text());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Dataset ExperimentConfig::make_train_split() const {
    SynthConfig c = data;
    return generate(c, "train");
}

Dataset ExperimentConfig::make_test_split() const {
    SynthConfig c = data;
    c.samples = samples_test;
    return generate(c, "test");
}

}  // namespace mce
