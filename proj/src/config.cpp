#include "rfl/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace rfl {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t comma = s.find(',', pos);
        if (comma == std::string::npos) {
            const std::string item = trim(s.substr(pos));
            if (!item.empty()) out.push_back(item);
            break;
        }
        const std::string item = trim(s.substr(pos, comma - pos));
        if (!item.empty()) out.push_back(item);
        pos = comma + 1;
    }
    return out;
}

long parse_int(const std::string& v, const std::string& where) {
    char* end = nullptr;
    const long n = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') {
        throw ConfigError(where + ": expected an integer, got '" + v + "'");
    }
    return n;
}

double parse_double(const std::string& v, const std::string& where) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') {
        throw ConfigError(where + ": expected a number, got '" + v + "'");
    }
    return d;
}

bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(where + ": expected true/false, got '" + v + "'");
}

void parse_range(const std::string& v, int& lo, int& hi, const std::string& where) {
    const std::size_t dash = v.find('-');
    if (dash == std::string::npos) {
        throw ConfigError(where + ": expected a class range like 0-4, got '" + v + "'");
    }
    lo = static_cast<int>(parse_int(trim(v.substr(0, dash)), where));
    hi = static_cast<int>(parse_int(trim(v.substr(dash + 1)), where));
    if (lo > hi) throw ConfigError(where + ": inverted range '" + v + "'");
}

std::vector<double> parse_double_list(const std::string& v, const std::string& where) {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(parse_double(item, where));
    if (out.empty()) throw ConfigError(where + ": empty list");
    return out;
}

std::vector<int> parse_int_list(const std::string& v, const std::string& where) {
    std::vector<int> out;
    for (const auto& item : split_list(v)) out.push_back(static_cast<int>(parse_int(item, where)));
    if (out.empty()) throw ConfigError(where + ": empty list");
    return out;
}

void apply_attack_key(AttackConfig& atk, const std::string& key, const std::string& value,
                      const std::string& where) {
    if (key == "kind") {
        if (value == "pgd") atk.kind = AttackConfig::Kind::pgd;
        else if (value == "fgsm") atk.kind = AttackConfig::Kind::fgsm;
        else throw ConfigError(where + ": unknown attack kind '" + value + "'");
    } else if (key == "epsilon") {
        atk.epsilon = parse_rational(value);
    } else if (key == "alpha") {
        atk.alpha = parse_rational(value);
    } else if (key == "steps") {
        atk.steps = static_cast<int>(parse_int(value, where));
    } else if (key == "random_start") {
        atk.random_start = parse_bool(value, where);
    } else {
        throw ConfigError("unknown key " + where);
    }
}

}  // namespace

double parse_rational(const std::string& text) {
    const std::string v = trim(text);
    const std::size_t slash = v.find('/');
    if (slash == std::string::npos) {
        return parse_double(v, "value '" + v + "'");
    }
    const long p = parse_int(trim(v.substr(0, slash)), "rational numerator");
    const long q = parse_int(trim(v.substr(slash + 1)), "rational denominator");
    if (q == 0) throw ConfigError("rational '" + v + "' divides by zero");
    const auto as_f32 = static_cast<float>(static_cast<double>(p) / static_cast<double>(q));
    std::fprintf(stderr, "config: parsed %s as %.9g\n", v.c_str(),
                 static_cast<double>(as_f32));
    return static_cast<double>(as_f32);
}

void apply_config_value(ExperimentConfig& cfg, const std::string& section,
                        const std::string& key, const std::string& value) {
    const std::string where = "[" + section + "] " + key;
    if (section == "data") {
        if (key == "dataset") cfg.dataset = value;
        else if (key == "synth_side") cfg.synth_side = static_cast<int>(parse_int(value, where));
        else if (key == "per_class_train") cfg.per_class_train = static_cast<int>(parse_int(value, where));
        else if (key == "per_class_val") cfg.per_class_val = static_cast<int>(parse_int(value, where));
        else if (key == "per_class_test") cfg.per_class_test = static_cast<int>(parse_int(value, where));
        else if (key == "source_classes") parse_range(value, cfg.source_lo, cfg.source_hi, where);
        else if (key == "target_classes") parse_range(value, cfg.target_lo, cfg.target_hi, where);
        else if (key == "idx_images") cfg.idx_images = value;
        else if (key == "idx_labels") cfg.idx_labels = value;
        else if (key == "cifar_batches") cfg.cifar_batches = split_list(value);
        else if (key == "split_train_per_class") cfg.split_train_per_class = static_cast<int>(parse_int(value, where));
        else if (key == "split_val_per_class") cfg.split_val_per_class = static_cast<int>(parse_int(value, where));
        else if (key == "official_split") cfg.official_split = parse_bool(value, where);
        else throw ConfigError("unknown key " + where);
    } else if (section == "model") {
        if (key == "arch") {
            if (value == "vit") cfg.arch = Arch::vit;
            else if (value == "mlp") cfg.arch = Arch::mlp;
            else throw ConfigError(where + ": unknown arch '" + value + "'");
        }
        else if (key == "image_side") cfg.vit.image_side = static_cast<int>(parse_int(value, where));
        else if (key == "channels") cfg.vit.channels = static_cast<int>(parse_int(value, where));
        else if (key == "patch") cfg.vit.patch = static_cast<int>(parse_int(value, where));
        else if (key == "depth") cfg.vit.depth = static_cast<int>(parse_int(value, where));
        else if (key == "width") cfg.vit.width = static_cast<int>(parse_int(value, where));
        else if (key == "heads") cfg.vit.heads = static_cast<int>(parse_int(value, where));
        else if (key == "mlp_ratio") cfg.vit.mlp_ratio = static_cast<int>(parse_int(value, where));
        else if (key == "classes") cfg.vit.classes = static_cast<int>(parse_int(value, where));
        else if (key == "mlp_widths") cfg.mlp_widths = parse_int_list(value, where);
        else if (key == "norm_mean") cfg.transform.mean = parse_double_list(value, where);
        else if (key == "norm_std") cfg.transform.std_dev = parse_double_list(value, where);
        else if (key == "resize_to") cfg.transform.resize_to = static_cast<int>(parse_int(value, where));
        else throw ConfigError("unknown key " + where);
    } else if (section == "strategy") {
        if (key == "kind") cfg.strategy.kind = strategy_kind_from_name(value);
        else if (key == "lora_rank") cfg.strategy.lora_rank = static_cast<int>(parse_int(value, where));
        else if (key == "lora_alpha") cfg.strategy.lora_alpha = parse_double(value, where);
        else if (key == "adapter_reduction") cfg.strategy.adapter_reduction = static_cast<int>(parse_int(value, where));
        else if (key == "vpt_tokens") cfg.strategy.vpt_tokens = static_cast<int>(parse_int(value, where));
        else if (key == "init") cfg.head_init.scheme = head_init_from_name(value);
        else if (key == "init_source") cfg.head_init.source_checkpoint = value;
        else if (key == "regli_l2") {
            cfg.head_init.regli_l2 = parse_double(value, where);
            cfg.regli_l2 = cfg.head_init.regli_l2;
        }
        else throw ConfigError("unknown key " + where);
    } else if (section == "attack.train") {
        apply_attack_key(cfg.train_attack, key, value, where);
    } else if (section == "attack.eval") {
        apply_attack_key(cfg.eval_attack, key, value, where);
    } else if (section == "optim") {
        if (key == "base_lr") cfg.optim.base_lr = parse_double(value, where);
        else if (key == "weight_decay") cfg.optim.weight_decay = parse_double(value, where);
        else if (key == "batch_size") cfg.optim.batch_size = static_cast<int>(parse_int(value, where));
        else if (key == "beta1") cfg.optim.beta1 = parse_double(value, where);
        else if (key == "beta2") cfg.optim.beta2 = parse_double(value, where);
        else if (key == "adam_eps") cfg.optim.eps = parse_double(value, where);
        else throw ConfigError("unknown key " + where);
    } else if (section == "schedule") {
        if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(value, where));
        else if (key == "warmup_frac") cfg.warmup_fraction = parse_double(value, where);
        else throw ConfigError("unknown key " + where);
    } else if (section == "pipeline") {
        if (key == "pretrain") {
            if (value == "standard") cfg.pretrain_adversarial = false;
            else if (value == "adversarial") cfg.pretrain_adversarial = true;
            else throw ConfigError(where + ": expected standard|adversarial");
        }
        else if (key == "finetune") {
            if (value == "standard") cfg.finetune_adversarial = false;
            else if (value == "adversarial") cfg.finetune_adversarial = true;
            else throw ConfigError(where + ": expected standard|adversarial");
        }
        else if (key == "pretrain_epsilon") {
            cfg.pretrain_attack.epsilon = parse_rational(value);
            // Step size follows the recipe alpha = 2*eps/3 unless set explicitly.
            cfg.pretrain_attack.alpha = 2.0 * cfg.pretrain_attack.epsilon / 3.0;
        }
        else if (key == "pretrain_alpha") cfg.pretrain_attack.alpha = parse_rational(value);
        else if (key == "pretrain_steps") cfg.pretrain_attack.steps = static_cast<int>(parse_int(value, where));
        else if (key == "pretrain_epochs") cfg.pretrain_epochs = static_cast<int>(parse_int(value, where));
        else if (key == "probe_epochs") cfg.probe_epochs = static_cast<int>(parse_int(value, where));
        else if (key == "probe_base_lr") cfg.probe_base_lr = parse_double(value, where);
        else if (key == "probe_weight_decay") cfg.probe_weight_decay = parse_double(value, where);
        else if (key == "regli_l2") cfg.regli_l2 = parse_double(value, where);
        else if (key == "grid_lr") cfg.grid_lr = parse_double_list(value, where);
        else if (key == "grid_wd") cfg.grid_wd = parse_double_list(value, where);
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(value, where));
        else if (key == "threads") cfg.threads = static_cast<int>(parse_int(value, where));
        else throw ConfigError("unknown key " + where);
    } else {
        throw ConfigError("unknown config section [" + section + "]");
    }
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError(origin + ":" + std::to_string(line_no) +
                                  ": malformed section header '" + t + "'");
            }
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected key = value, got '" + t + "'");
        }
        if (section.empty()) {
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": key outside any section");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        try {
            apply_config_value(cfg, section, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_double_list(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += fmt_double(v[i]);
    }
    return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string fmt_string_list(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
    }
    return out;
}

void render_attack(std::ostringstream& os, const char* section, const AttackConfig& a) {
    os << "[" << section << "]\n";
    os << "kind = " << (a.kind == AttackConfig::Kind::pgd ? "pgd" : "fgsm") << "\n";
    os << "epsilon = " << fmt_double(a.epsilon) << "\n";
    os << "alpha = " << fmt_double(a.alpha) << "\n";
    os << "steps = " << a.steps << "\n";
    os << "random_start = " << (a.random_start ? "true" : "false") << "\n\n";
}

}  // namespace

std::string render_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "[data]\n";
    os << "dataset = " << cfg.dataset << "\n";
    os << "synth_side = " << cfg.synth_side << "\n";
    os << "per_class_train = " << cfg.per_class_train << "\n";
    os << "per_class_val = " << cfg.per_class_val << "\n";
    os << "per_class_test = " << cfg.per_class_test << "\n";
    os << "source_classes = " << cfg.source_lo << "-" << cfg.source_hi << "\n";
    os << "target_classes = " << cfg.target_lo << "-" << cfg.target_hi << "\n";
    if (!cfg.idx_images.empty()) os << "idx_images = " << cfg.idx_images << "\n";
    if (!cfg.idx_labels.empty()) os << "idx_labels = " << cfg.idx_labels << "\n";
    if (!cfg.cifar_batches.empty())
        os << "cifar_batches = " << fmt_string_list(cfg.cifar_batches) << "\n";
    os << "split_train_per_class = " << cfg.split_train_per_class << "\n";
    os << "split_val_per_class = " << cfg.split_val_per_class << "\n";
    os << "official_split = " << (cfg.official_split ? "true" : "false") << "\n\n";

    os << "[model]\n";
    os << "arch = " << (cfg.arch == Arch::vit ? "vit" : "mlp") << "\n";
    os << "image_side = " << cfg.vit.image_side << "\n";
    os << "channels = " << cfg.vit.channels << "\n";
    os << "patch = " << cfg.vit.patch << "\n";
    os << "depth = " << cfg.vit.depth << "\n";
    os << "width = " << cfg.vit.width << "\n";
    os << "heads = " << cfg.vit.heads << "\n";
    os << "mlp_ratio = " << cfg.vit.mlp_ratio << "\n";
    os << "classes = " << cfg.vit.classes << "\n";
    os << "mlp_widths = " << fmt_int_list(cfg.mlp_widths) << "\n";
    os << "norm_mean = " << fmt_double_list(cfg.transform.mean) << "\n";
    os << "norm_std = " << fmt_double_list(cfg.transform.std_dev) << "\n";
    os << "resize_to = " << cfg.transform.resize_to << "\n\n";

    os << "[strategy]\n";
    os << "kind = " << strategy_kind_name(cfg.strategy.kind) << "\n";
    os << "lora_rank = " << cfg.strategy.lora_rank << "\n";
    os << "lora_alpha = " << fmt_double(cfg.strategy.lora_alpha) << "\n";
    os << "adapter_reduction = " << cfg.strategy.adapter_reduction << "\n";
    os << "vpt_tokens = " << cfg.strategy.vpt_tokens << "\n";
    os << "init = " << head_init_name(cfg.head_init.scheme) << "\n";
    if (!cfg.head_init.source_checkpoint.empty())
        os << "init_source = " << cfg.head_init.source_checkpoint << "\n";
    os << "regli_l2 = " << fmt_double(cfg.head_init.regli_l2) << "\n\n";

    render_attack(os, "attack.train", cfg.train_attack);
    render_attack(os, "attack.eval", cfg.eval_attack);

    os << "[optim]\n";
    os << "base_lr = " << fmt_double(cfg.optim.base_lr) << "\n";
    os << "weight_decay = " << fmt_double(cfg.optim.weight_decay) << "\n";
    os << "batch_size = " << cfg.optim.batch_size << "\n";
    os << "beta1 = " << fmt_double(cfg.optim.beta1) << "\n";
    os << "beta2 = " << fmt_double(cfg.optim.beta2) << "\n";
    os << "adam_eps = " << fmt_double(cfg.optim.eps) << "\n\n";

    os << "[schedule]\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "warmup_frac = " << fmt_double(cfg.warmup_fraction) << "\n\n";

    os << "[pipeline]\n";
    os << "pretrain = " << (cfg.pretrain_adversarial ? "adversarial" : "standard") << "\n";
    os << "finetune = " << (cfg.finetune_adversarial ? "adversarial" : "standard") << "\n";
    os << "pretrain_epsilon = " << fmt_double(cfg.pretrain_attack.epsilon) << "\n";
    os << "pretrain_alpha = " << fmt_double(cfg.pretrain_attack.alpha) << "\n";
    os << "pretrain_steps = " << cfg.pretrain_attack.steps << "\n";
    os << "pretrain_epochs = " << cfg.pretrain_epochs << "\n";
    os << "probe_epochs = " << cfg.probe_epochs << "\n";
    os << "probe_base_lr = " << fmt_double(cfg.probe_base_lr) << "\n";
    os << "probe_weight_decay = " << fmt_double(cfg.probe_weight_decay) << "\n";
    os << "regli_l2 = " << fmt_double(cfg.regli_l2) << "\n";
    if (!cfg.grid_lr.empty()) os << "grid_lr = " << fmt_double_list(cfg.grid_lr) << "\n";
    if (!cfg.grid_wd.empty()) os << "grid_wd = " << fmt_double_list(cfg.grid_wd) << "\n";
    os << "out_dir = " << cfg.out_dir << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "threads = " << cfg.threads << "\n";
    return os.str();
}

}  // namespace rfl
