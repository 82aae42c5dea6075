#include "metamirror/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace metamirror {

const char* kEnvPrefix = "METAMIRROR_";

MlpSpec RunConfig::model_spec() const {
    MlpSpec spec;
    if (task.family == TaskFamily::Sinusoid) {
        spec.layer_sizes.push_back(1);
        for (Index h : hidden) spec.layer_sizes.push_back(h);
        spec.layer_sizes.push_back(1);
        spec.head = HeadKind::Regression;
    } else {
        spec.layer_sizes.push_back(task.input_dim);
        for (Index h : hidden) spec.layer_sizes.push_back(h);
        spec.layer_sizes.push_back(task.class_count);
        spec.head = HeadKind::Classification;
    }
    spec.validate();
    return spec;
}

void RunConfig::validate() const {
    task.validate();
    meta.validate();
    model_spec();
    if (out_dir.empty()) {
        throw ConfigError("out_dir must not be empty");
    }
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

struct KeyTable {
    // key -> setter taking the raw value string; throws ConfigError on a bad value
    std::map<std::string, std::function<void(RunConfig&, const std::string&)>> setters;

    KeyTable() {
        setters["method"] = [](RunConfig& c, const std::string& v) {
            c.method = method_from_name(v);
        };
        setters["family"] = [](RunConfig& c, const std::string& v) {
            if (v == "sinusoid") {
                c.task.family = TaskFamily::Sinusoid;
            } else if (v == "blobs") {
                c.task.family = TaskFamily::GaussianBlobs;
            } else {
                throw ConfigError("family must be sinusoid or blobs, got " + v);
            }
        };
        auto int_setter = [](int TaskFamilyConfig::* field) {
            return [field](RunConfig& c, const std::string& v) {
                c.task.*field = parse_int(v);
            };
        };
        setters["task.classes"] = int_setter(&TaskFamilyConfig::class_count);
        setters["task.shots"] = int_setter(&TaskFamilyConfig::shots);
        setters["task.input_dim"] = int_setter(&TaskFamilyConfig::input_dim);
        auto dbl_setter = [](double TaskFamilyConfig::* field) {
            return [field](RunConfig& c, const std::string& v) {
                c.task.*field = parse_double(v);
            };
        };
        setters["task.amplitude_lo"] = dbl_setter(&TaskFamilyConfig::amplitude_lo);
        setters["task.amplitude_hi"] = dbl_setter(&TaskFamilyConfig::amplitude_hi);
        setters["task.phase_lo"] = dbl_setter(&TaskFamilyConfig::phase_lo);
        setters["task.phase_hi"] = dbl_setter(&TaskFamilyConfig::phase_hi);
        setters["task.center_range"] = dbl_setter(&TaskFamilyConfig::center_range);
        setters["task.cluster_spread"] = dbl_setter(&TaskFamilyConfig::cluster_spread);
        setters["model.hidden"] = [](RunConfig& c, const std::string& v) {
            c.hidden.clear();
            std::istringstream is(v);
            std::string tok;
            while (std::getline(is, tok, ',')) {
                c.hidden.push_back(parse_int(trim(tok)));
            }
            if (c.hidden.empty()) {
                throw ConfigError("model.hidden must list at least one layer width");
            }
        };
        setters["inner.steps"] = [](RunConfig& c, const std::string& v) {
            c.meta.inner.steps = parse_int(v);
        };
        setters["inner.alpha"] = [](RunConfig& c, const std::string& v) {
            c.meta.inner.step_size = parse_double(v);
        };
        setters["outer.iters"] = [](RunConfig& c, const std::string& v) {
            c.meta.outer_iters = parse_int(v);
        };
        setters["outer.beta"] = [](RunConfig& c, const std::string& v) {
            c.meta.outer_step = parse_double(v);
        };
        setters["outer.batch"] = [](RunConfig& c, const std::string& v) {
            c.meta.batch_size = parse_int(v);
            if (c.meta.pool_size < c.meta.batch_size) {
                c.meta.pool_size = c.meta.batch_size;
            }
        };
        setters["outer.pool"] = [](RunConfig& c, const std::string& v) {
            c.meta.pool_size = parse_int(v);
        };
        setters["eval.tasks"] = [](RunConfig& c, const std::string& v) {
            c.meta.eval_tasks = parse_int(v);
        };
        setters["seed"] = [](RunConfig& c, const std::string& v) {
            c.meta.seed = parse_u64(v);
        };
        setters["out_dir"] = [](RunConfig& c, const std::string& v) {
            c.out_dir = v;
        };
    }

    static int parse_int(const std::string& v) {
        try {
            std::size_t used = 0;
            const int out = std::stoi(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("expected an integer, got '" + v + "'");
        }
    }

    static double parse_double(const std::string& v) {
        try {
            std::size_t used = 0;
            const double out = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("expected a number, got '" + v + "'");
        }
    }

    static std::uint64_t parse_u64(const std::string& v) {
        try {
            std::size_t used = 0;
            const std::uint64_t out = std::stoull(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("expected an unsigned integer, got '" + v + "'");
        }
    }
};

const KeyTable& key_table() {
    static const KeyTable table;
    return table;
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        const auto it = key_table().setters.find(key);
        if (it == key_table().setters.end()) {
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": unknown key '" + key + "'");
        }
        try {
            it->second(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": " +
                              e.what());
        } catch (const InvalidArgumentError& e) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": " +
                              e.what());
        }
    }
    return cfg;
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config_text(buf.str(), path);
}

void apply_env_overrides(RunConfig& cfg) {
    for (const auto& [key, setter] : key_table().setters) {
        std::string env_name = kEnvPrefix;
        for (char c : key) {
            env_name.push_back(c == '.' ? '_' : static_cast<char>(
                                                    std::toupper(static_cast<unsigned char>(c))));
        }
        if (const char* value = std::getenv(env_name.c_str())) {
            try {
                setter(cfg, value);
            } catch (const ConfigError& e) {
                throw ConfigError("environment override " + env_name + ": " +
                                  e.what());
            }
        }
    }
}

}  // namespace metamirror
