#include "mce/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mce/config.hpp"

namespace mce {

namespace {

void write_bin(const std::string& path, const void* data, size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

std::vector<char> read_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    auto size = in.tellg();
    std::vector<char> buf(static_cast<size_t>(size));
    in.seekg(0);
    in.read(buf.data(), size);
    return buf;
}

void save_params_with_header(const std::string& prefix, const ParamRefs& params,
                             const std::string& header) {
    std::ostringstream manifest;
    manifest << header;
    std::vector<double> blob;
    for (const auto& [name, p] : params) {
        manifest << "param " << name << " ";
        const auto& shape = p->shape();
        for (size_t i = 0; i < shape.size(); ++i) manifest << (i ? "x" : "") << shape[i];
        manifest << "\n";
        const auto& v = p->values();
        blob.insert(blob.end(), v.begin(), v.end());
    }
    std::ofstream mf(prefix + ".manifest", std::ios::binary);
    if (!mf) throw ConfigError("cannot write '" + prefix + ".manifest'");
    mf << manifest.str();
    write_bin(prefix + ".bin", blob.data(), blob.size() * sizeof(double));
}

void load_params_from(const std::string& prefix, ParamRefs& params) {
    std::vector<char> blob = read_bin(prefix + ".bin");
    size_t expected = 0;
    for (const auto& [name, p] : params) expected += static_cast<size_t>(p->size());
    if (blob.size() != expected * sizeof(double)) {
        throw ConfigError("checkpoint '" + prefix + "': parameter payload size mismatch");
    }
    const double* src = reinterpret_cast<const double*>(blob.data());
    for (auto& [name, p] : params) {
        std::vector<double> v(src, src + p->size());
        src += p->size();
        *p = Tensor(p->shape(), std::move(v));
    }
}

std::map<std::string, std::string> read_kv_header(const std::string& path,
                                                  std::vector<std::string>* param_lines) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("param ", 0) == 0) {
            if (param_lines) param_lines->push_back(line);
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto strip = [](std::string& s) {
            while (!s.empty() && (s.front() == ' ')) s.erase(s.begin());
            while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
        };
        strip(key);
        strip(value);
        kv[key] = value;
    }
    return kv;
}

}  // namespace

std::string file_hash_hex(const std::string& path) {
    std::vector<char> data = read_bin(path);
    uint64_t h = fnv1a64(std::string_view(data.data(), data.size()));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string dataset_fingerprint(const Dataset& ds) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (double v : ds.inputs) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        h = mix_seed(h, bits);
    }
    for (uint8_t v : ds.presence.e) h = mix_seed(h, v);
    for (int v : ds.labels) h = mix_seed(h, static_cast<uint64_t>(v));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

uint64_t params_hash(const ParamRefs& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, p] : params) {
        h = mix_seed(h, fnv1a64(name));
        for (double v : p->values()) {
            uint64_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            h = mix_seed(h, bits);
        }
    }
    return h;
}

ParamRefs unimodal_params(UnimodalModel& model) {
    ParamRefs refs;
    refs.emplace_back("enc.l1.w", &model.enc.l1.w);
    refs.emplace_back("enc.l1.b", &model.enc.l1.b);
    refs.emplace_back("enc.l2.w", &model.enc.l2.w);
    refs.emplace_back("enc.l2.b", &model.enc.l2.b);
    refs.emplace_back("dec.w", &model.dec.w);
    refs.emplace_back("dec.b", &model.dec.b);
    return refs;
}

void save_checkpoint(const std::string& prefix, MultiModalModel& model, uint64_t seed, int step) {
    const ModelConfig& c = model.config();
    std::ostringstream header;
    header << "format = mce-checkpoint-v1\n";
    header << "modalities = " << c.modalities << "\n";
    header << "classes = " << c.classes << "\n";
    header << "input_dim = " << c.input_dim << "\n";
    header << "feature_dim = " << c.feature_dim << "\n";
    header << "heads = " << c.heads << "\n";
    header << "ffn_dim = " << c.ffn_dim << "\n";
    header << "pos_sigma = " << format_double(c.pos_sigma) << "\n";
    header << "seed = " << seed << "\n";
    header << "step = " << step << "\n";
    ParamRefs params = model.params();
    save_params_with_header(prefix, params, header.str());
}

MultiModalModel load_checkpoint(const std::string& prefix) {
    auto kv = read_kv_header(prefix + ".manifest", nullptr);
    auto need = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw ConfigError("checkpoint '" + prefix + "': missing field '" + key + "'");
        }
        return it->second;
    };
    ModelConfig c;
    c.modalities = static_cast<int>(parse_long(need("modalities"), "modalities"));
    c.classes = static_cast<int>(parse_long(need("classes"), "classes"));
    c.input_dim = static_cast<int>(parse_long(need("input_dim"), "input_dim"));
    c.feature_dim = static_cast<int>(parse_long(need("feature_dim"), "feature_dim"));
    c.heads = static_cast<int>(parse_long(need("heads"), "heads"));
    c.ffn_dim = static_cast<int>(parse_long(need("ffn_dim"), "ffn_dim"));
    c.pos_sigma = parse_double(need("pos_sigma"), "pos_sigma");
    uint64_t seed = static_cast<uint64_t>(parse_long(need("seed"), "seed"));
    MultiModalModel model(c, seed);
    ParamRefs params = model.params();
    load_params_from(prefix, params);
    return model;
}

void save_unimodal(const std::string& prefix, UnimodalModel& model, const ModelConfig& cfg) {
    std::ostringstream header;
    header << "format = mce-unimodal-v1\n";
    header << "modality = " << model.modality << "\n";
    header << "input_dim = " << cfg.input_dim << "\n";
    header << "feature_dim = " << cfg.feature_dim << "\n";
    header << "classes = " << cfg.classes << "\n";
    ParamRefs params = unimodal_params(model);
    save_params_with_header(prefix, params, header.str());
}

UnimodalModel load_unimodal(const std::string& prefix, const ModelConfig& cfg) {
    auto kv = read_kv_header(prefix + ".manifest", nullptr);
    UnimodalModel model;
    auto it = kv.find("modality");
    if (it == kv.end()) throw ConfigError("unimodal checkpoint '" + prefix + "': missing modality");
    model.modality = static_cast<int>(parse_long(it->second, "modality"));
    Rng rng(0);
    model.enc = Encoder::init(cfg.input_dim, cfg.feature_dim, cfg.feature_dim, rng);
    model.dec = DenseLayer::init(cfg.feature_dim, cfg.classes, rng);
    ParamRefs params = unimodal_params(model);
    load_params_from(prefix, params);
    return model;
}

void save_dataset(const std::string& prefix, const Dataset& ds, const SynthConfig& cfg,
                  const std::string& split) {
    std::ostringstream meta;
    meta << "format = mce-dataset-v1\n";
    meta << "modalities = " << ds.modalities << "\n";
    meta << "classes = " << ds.classes << "\n";
    meta << "input_dim = " << ds.input_dim << "\n";
    meta << "samples = " << ds.size() << "\n";
    meta << "seed = " << cfg.seed << "\n";
    meta << "split = " << split << "\n";
    meta << "snr = ";
    for (size_t i = 0; i < cfg.snr.size(); ++i) meta << (i ? "," : "") << format_double(cfg.snr[i]);
    meta << "\n";
    meta << "missing_rates = ";
    for (size_t i = 0; i < cfg.missing_rates.size(); ++i) {
        meta << (i ? "," : "") << format_double(cfg.missing_rates[i]);
    }
    meta << "\n";
    std::ofstream mf(prefix + ".meta", std::ios::binary);
    if (!mf) throw ConfigError("cannot write '" + prefix + ".meta'");
    mf << meta.str();

    std::ofstream out(prefix + ".bin", std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + prefix + ".bin'");
    out.write(reinterpret_cast<const char*>(ds.inputs.data()),
              static_cast<std::streamsize>(ds.inputs.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(ds.presence.e.data()),
              static_cast<std::streamsize>(ds.presence.e.size()));
    std::vector<int32_t> labels(ds.labels.begin(), ds.labels.end());
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size() * sizeof(int32_t)));
}

Dataset load_dataset(const std::string& prefix) {
    auto kv = read_kv_header(prefix + ".meta", nullptr);
    auto need = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("dataset '" + prefix + "': missing field '" + key + "'");
        return it->second;
    };
    Dataset ds;
    ds.modalities = static_cast<int>(parse_long(need("modalities"), "modalities"));
    ds.classes = static_cast<int>(parse_long(need("classes"), "classes"));
    ds.input_dim = static_cast<int>(parse_long(need("input_dim"), "input_dim"));
    int samples = static_cast<int>(parse_long(need("samples"), "samples"));

    std::vector<char> blob = read_bin(prefix + ".bin");
    size_t n_inputs = static_cast<size_t>(samples) * ds.modalities * ds.input_dim;
    size_t n_presence = static_cast<size_t>(samples) * ds.modalities;
    size_t expected = n_inputs * sizeof(double) + n_presence + static_cast<size_t>(samples) * sizeof(int32_t);
    if (blob.size() != expected) {
        throw ConfigError("dataset '" + prefix + "': payload size mismatch");
    }
    const char* p = blob.data();
    ds.inputs.resize(n_inputs);
    std::memcpy(ds.inputs.data(), p, n_inputs * sizeof(double));
    p += n_inputs * sizeof(double);
    ds.presence.samples = samples;
    ds.presence.modalities = ds.modalities;
    ds.presence.e.assign(reinterpret_cast<const uint8_t*>(p),
                         reinterpret_cast<const uint8_t*>(p) + n_presence);
    p += n_presence;
    std::vector<int32_t> labels(static_cast<size_t>(samples));
    std::memcpy(labels.data(), p, static_cast<size_t>(samples) * sizeof(int32_t));
    ds.labels.assign(labels.begin(), labels.end());
    return ds;
}

void dataset_to_csv(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << "sample,label";
    for (int m = 0; m < ds.modalities; ++m) out << ",present_m" << m;
    for (int m = 0; m < ds.modalities; ++m) {
        for (int d = 0; d < ds.input_dim; ++d) out << ",x_m" << m << "_d" << d;
    }
    out << "\n";
    for (int n = 0; n < ds.size(); ++n) {
        out << n << "," << ds.labels[static_cast<size_t>(n)];
        for (int m = 0; m < ds.modalities; ++m) out << "," << (ds.presence.present(n, m) ? 1 : 0);
        for (int m = 0; m < ds.modalities; ++m) {
            const double* x = ds.input(n, m);
            for (int d = 0; d < ds.input_dim; ++d) out << "," << format_double(x[d]);
        }
        out << "\n";
    }
}

}  // namespace mce
