#include "nledn/config_file.hpp"

#include <fstream>
#include <sstream>

namespace nledn {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::array<int, 3> parse_grids(const std::string& v, const std::string& key) {
    std::array<int, 3> out{};
    std::istringstream is(v);
    std::string item;
    int i = 0;
    while (std::getline(is, item, ',')) {
        if (i >= 3) throw Error("config: " + key + " must have exactly 3 entries");
        out[static_cast<std::size_t>(i++)] = std::stoi(trim(item));
    }
    if (i != 3) throw Error("config: " + key + " must have exactly 3 entries");
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error("config: bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw Error("config: line " + std::to_string(lineno) + " is not 'key = value': " + t);
        }
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return kv;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("config: cannot open " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

void apply_config(const std::map<std::string, std::string>& kv, ModelConfig& model,
                  TrainConfig& train) {
    for (const auto& [key, value] : kv) {
        if (key == "base_channels") model.base_channels = std::stoi(value);
        else if (key == "growth_rate") model.growth_rate = std::stoi(value);
        else if (key == "dense_layers_per_block") model.dense_layers = std::stoi(value);
        else if (key == "encoder_grids") model.encoder_grids = parse_grids(value, key);
        else if (key == "decoder_grids") model.decoder_grids = parse_grids(value, key);
        else if (key == "nonlocal_enabled") model.nonlocal_enabled = parse_bool(value, key);
        else if (key == "dense_connections_enabled")
            model.dense_connections = parse_bool(value, key);
        else if (key == "pooling_enabled") model.pooling_enabled = parse_bool(value, key);
        else if (key == "num_blocks") model.num_blocks = std::stoi(value);
        else if (key == "affinity_mode") {
            if (value == "softmax") model.affinity_mode = AffinityMode::kSoftmax;
            else if (value == "raw-sum") model.affinity_mode = AffinityMode::kRawSum;
            else throw Error("config: affinity_mode must be 'softmax' or 'raw-sum'");
        } else if (key == "seed") {
            model.seed = std::stoull(value);
            train.seed = model.seed;
        } else if (key == "lr_init") train.lr_init = std::stod(value);
        else if (key == "lr_floor") train.lr_floor = std::stod(value);
        else if (key == "lr_decay_factor") train.lr_decay_factor = std::stod(value);
        else if (key == "plateau_patience") train.plateau_patience = std::stol(value);
        else if (key == "ema_decay") train.ema_decay = std::stod(value);
        else if (key == "weight_decay") train.weight_decay = std::stod(value);
        else if (key == "beta1") train.beta1 = std::stod(value);
        else if (key == "beta2") train.beta2 = std::stod(value);
        else if (key == "eps") train.eps = std::stod(value);
        else if (key == "batch_size") train.batch_size = std::stoi(value);
        else if (key == "max_steps") train.max_steps = std::stol(value);
        else if (key == "checkpoint_every") train.checkpoint_every = std::stol(value);
        else throw Error("config: unknown key '" + key + "'");
    }
}

std::string config_to_text(const ModelConfig& model, const TrainConfig& train) {
    std::ostringstream os;
    os << "base_channels = " << model.base_channels << "\n";
    os << "growth_rate = " << model.growth_rate << "\n";
    os << "dense_layers_per_block = " << model.dense_layers << "\n";
    os << "encoder_grids = " << model.encoder_grids[0] << "," << model.encoder_grids[1] << ","
       << model.encoder_grids[2] << "\n";
    os << "decoder_grids = " << model.decoder_grids[0] << "," << model.decoder_grids[1] << ","
       << model.decoder_grids[2] << "\n";
    os << "nonlocal_enabled = " << (model.nonlocal_enabled ? "true" : "false") << "\n";
    os << "dense_connections_enabled = " << (model.dense_connections ? "true" : "false") << "\n";
    os << "pooling_enabled = " << (model.pooling_enabled ? "true" : "false") << "\n";
    os << "num_blocks = " << model.num_blocks << "\n";
    os << "affinity_mode = "
       << (model.affinity_mode == AffinityMode::kRawSum ? "raw-sum" : "softmax") << "\n";
    os << "seed = " << model.seed << "\n";
    os << "lr_init = " << train.lr_init << "\n";
    os << "lr_floor = " << train.lr_floor << "\n";
    os << "lr_decay_factor = " << train.lr_decay_factor << "\n";
    os << "plateau_patience = " << train.plateau_patience << "\n";
    os << "ema_decay = " << train.ema_decay << "\n";
    os << "weight_decay = " << train.weight_decay << "\n";
    os << "beta1 = " << train.beta1 << "\n";
    os << "beta2 = " << train.beta2 << "\n";
    os << "eps = " << train.eps << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "max_steps = " << train.max_steps << "\n";
    os << "checkpoint_every = " << train.checkpoint_every << "\n";
    return os.str();
}

}  // namespace nledn
