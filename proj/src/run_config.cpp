#include "dgnet/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dgnet {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class Int>
Int parse_integer(const std::string& key, const std::string& value)
{
    Int out{};
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
        throw ConfigError("config: '" + key + "' expects an integer, got '" + value + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& value)
{
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
    }
    return out;
}

bool parse_flag(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError("config: '" + key + "' expects true or false, got '" + value + "'");
}

std::string show(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string show(bool v) { return v ? "true" : "false"; }

struct Field {
    std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class Member>
Field integer_field(Member member)
{
    return {[member](RunConfig& c, const std::string& k, const std::string& v) {
                auto& slot = member(c);
                slot = parse_integer<std::remove_reference_t<decltype(slot)>>(k, v);
            },
            [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Field real_field(Member member)
{
    return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_real(k, v); },
            [member](const RunConfig& c) { return show(member(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Field flag_field(Member member)
{
    return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_flag(k, v); },
            [member](const RunConfig& c) { return show(static_cast<bool>(member(const_cast<RunConfig&>(c)))); }};
}

#define DGNET_FIELD(kind, expr) kind##_field([](RunConfig& c) -> auto& { return c.expr; })

const std::map<std::string, Field>& fields()
{
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        t["model.variant"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                  const Variant variant = parse_variant(v);
                                  if (variant == Variant::Custom) {
                                      c.model.variant = variant;
                                      return;
                                  }
                                  const ModelConfig preset = ModelConfig::for_variant(variant);
                                  c.model.variant = variant;
                                  c.model.n1 = preset.n1;
                                  c.model.n2 = preset.n2;
                                  c.model.base_width = preset.base_width;
                              },
                              [](const RunConfig& c) { return to_string(c.model.variant); }};
        t["model.n1"] = DGNET_FIELD(integer, model.n1);
        t["model.n2"] = DGNET_FIELD(integer, model.n2);
        t["model.base_width"] = DGNET_FIELD(integer, model.base_width);
        t["model.sense_blocks"] = DGNET_FIELD(integer, model.sense_blocks);
        t["model.frr_input"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                                    if (v == "features") c.model.frr_input = FrrInput::Features;
                                    else if (v == "rgb") c.model.frr_input = FrrInput::Rgb;
                                    else throw ConfigError("config: '" + k + "' expects features or rgb, got '" + v + "'");
                                },
                                [](const RunConfig& c) {
                                    return std::string(c.model.frr_input == FrrInput::Rgb ? "rgb" : "features");
                                }};
        t["model.ablation.frr"] = DGNET_FIELD(flag, model.ablation.frr);
        t["model.ablation.frs"] = DGNET_FIELD(flag, model.ablation.frs);
        t["model.ablation.cci"] = DGNET_FIELD(flag, model.ablation.cci);
        t["model.ablation.fsm"] = DGNET_FIELD(flag, model.ablation.fsm);
        t["model.ablation.sense_sigmoid"] = DGNET_FIELD(flag, model.ablation.sense_sigmoid);
        t["model.ablation.laplacian"] = DGNET_FIELD(flag, model.ablation.laplacian);
        t["model.ablation.sense_tail"] = DGNET_FIELD(flag, model.ablation.sense_tail);
        t["model.ablation.frr_instead"] = DGNET_FIELD(flag, model.ablation.frr_instead);
        t["model.ablation.frs_instead"] = DGNET_FIELD(flag, model.ablation.frs_instead);

        t["lr"] = DGNET_FIELD(real, train.adamw.lr);
        t["adamw.beta1"] = DGNET_FIELD(real, train.adamw.beta1);
        t["adamw.beta2"] = DGNET_FIELD(real, train.adamw.beta2);
        t["adamw.eps"] = DGNET_FIELD(real, train.adamw.eps);
        t["adamw.weight_decay"] = DGNET_FIELD(real, train.adamw.weight_decay);
        t["batch"] = DGNET_FIELD(integer, train.batch);
        t["seed"] = DGNET_FIELD(integer, train.seed);
        t["epochs"] = DGNET_FIELD(integer, train.epochs);
        t["max_steps"] = DGNET_FIELD(integer, train.max_steps);
        t["ema_decay"] = DGNET_FIELD(real, train.ema_decay);
        t["ema_warmup"] = DGNET_FIELD(flag, train.ema_warmup);
        t["gamma_warmup"] = DGNET_FIELD(flag, train.gamma_warmup);
        t["pseudo_label"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                                 if (v == "step") c.train.pseudo_label = PseudoLabelMode::PerStep;
                                 else if (v == "epoch") c.train.pseudo_label = PseudoLabelMode::PerEpoch;
                                 else throw ConfigError("config: '" + k + "' expects step or epoch, got '" + v + "'");
                             },
                             [](const RunConfig& c) {
                                 return std::string(c.train.pseudo_label == PseudoLabelMode::PerEpoch ? "epoch" : "step");
                             }};
        t["progressive"] = DGNET_FIELD(flag, train.progressive);
        t["image_size"] = DGNET_FIELD(integer, train.image_size);
        t["grad_clip"] = DGNET_FIELD(real, train.grad_clip);
        t["validate_every"] = DGNET_FIELD(integer, train.validate_every);
        t["validate_with_ema"] = DGNET_FIELD(flag, train.validate_with_ema);
        t["loss.alpha"] = DGNET_FIELD(real, train.loss.alpha);
        t["loss.beta"] = DGNET_FIELD(real, train.loss.beta);
        t["loss.gamma"] = DGNET_FIELD(real, train.loss.gamma);
        t["clahe.tiles"] = DGNET_FIELD(integer, train.clahe.tiles);
        t["clahe.bins"] = DGNET_FIELD(integer, train.clahe.bins);
        t["clahe.clip_limit"] = DGNET_FIELD(real, train.clahe.clip_limit);
        t["clahe.blend"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                                if (v == "bilinear") c.train.clahe.blend = ClaheBlend::Bilinear;
                                else if (v == "none") c.train.clahe.blend = ClaheBlend::None;
                                else throw ConfigError("config: '" + k + "' expects bilinear or none, got '" + v + "'");
                            },
                            [](const RunConfig& c) {
                                return std::string(c.train.clahe.blend == ClaheBlend::None ? "none" : "bilinear");
                            }};
        t["schedule.start_size"] = DGNET_FIELD(integer, train.schedule.start_size);
        t["schedule.end_size"] = DGNET_FIELD(integer, train.schedule.end_size);
        t["schedule.stages"] = DGNET_FIELD(integer, train.schedule.stages);
        return t;
    }();
    return table;
}

#undef DGNET_FIELD

} // namespace

void RunConfig::set(const std::string& key, const std::string& value)
{
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second.set(*this, key, value);
}

void RunConfig::set_assignment(const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::merge_text(const std::string& text, const std::string& origin)
{
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        try {
            set_assignment(t);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
        }
    }
}

void RunConfig::merge_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    merge_text(text.str(), path.string());
}

void RunConfig::validate() const
{
    model.validate();
    train.validate();
}

std::string RunConfig::dump() const
{
    std::string out;
    for (const auto& [key, field] : fields()) out += key + "=" + field.get(*this) + "\n";
    return out;
}

std::vector<std::string> RunConfig::keys()
{
    std::vector<std::string> out;
    for (const auto& entry : fields()) out.push_back(entry.first);
    return out;
}

} // namespace dgnet
