#include "forge/lora.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "forge/error.hpp"
#include "forge/rng.hpp"

namespace forge::lora {

namespace {

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
    std::int64_t out = 0;
    if (__builtin_mul_overflow(a, b, &out))
        throw error("overflow", "parameter count overflows 64-bit arithmetic");
    return out;
}

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
    std::int64_t out = 0;
    if (__builtin_add_overflow(a, b, &out))
        throw error("overflow", "parameter count overflows 64-bit arithmetic");
    return out;
}

void require_finite(const std::vector<double>& entries) {
    for (double v : entries)
        if (!std::isfinite(v)) throw error("not_finite", "matrix entry is not finite");
}

std::int64_t get_int(const nlohmann::json& j, const char* field, const char* err_code) {
    if (!j.contains(field) || !j[field].is_number_integer())
        throw error(err_code, std::string("missing or non-integer field: ") + field);
    return j[field].get<std::int64_t>();
}

// y += M*x for a row-major matrix
void accumulate_matvec(const matrix& m, const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        double acc = y[r];
        const double* row = m.entries.data() + r * m.cols;
        for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

std::vector<double> matvec(const matrix& m, const std::vector<double>& x) {
    std::vector<double> y(m.rows, 0.0);
    accumulate_matvec(m, x, y);
    return y;
}

void check_adapter_shapes(const matrix& w, const adapter_pair& adapter) {
    if (adapter.r < 1) throw error("shape_error", "adapter rank must be >= 1");
    if (adapter.a.rows != static_cast<std::size_t>(adapter.r) ||
        adapter.b.cols != static_cast<std::size_t>(adapter.r))
        throw error("shape_error", "adapter matrices do not match the declared rank");
    if (adapter.a.cols != w.cols || adapter.b.rows != w.rows)
        throw error("shape_error", "adapter matrices do not match the base weight shape");
}

double loss_of(const matrix& w, const adapter_pair& adapter, const std::vector<double>& x,
               const std::vector<double>& target) {
    const auto y = lora_forward(w, adapter, x);
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - target[i];
        loss += 0.5 * d * d;
    }
    return loss;
}

// |analytic - numeric| over max(1, |analytic|, |numeric|): the unit floor
// keeps finite-difference noise near zero from inflating the ratio.
double rel_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

} // namespace

matrix::matrix(std::size_t r, std::size_t c, std::vector<double> e)
    : rows(r), cols(c), entries(std::move(e)) {
    if (entries.size() != rows * cols)
        throw error("shape_error", "entry count does not match rows*cols");
    require_finite(entries);
}

arch_spec arch_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw error("bad_arch_spec", "architecture spec must be a JSON object");
    arch_spec arch;
    arch.name = j.value("name", "");
    arch.vocab_size = get_int(j, "vocab_size", "bad_arch_spec");
    arch.d_model = get_int(j, "d_model", "bad_arch_spec");
    arch.n_layers = get_int(j, "n_layers", "bad_arch_spec");
    arch.final_norm_dim = get_int(j, "final_norm_dim", "bad_arch_spec");
    if (!j.contains("tied_head") || !j["tied_head"].is_boolean())
        throw error("bad_arch_spec", "missing or non-boolean field: tied_head");
    arch.tied_head = j["tied_head"].get<bool>();
    arch.head_out_dim = j.contains("head_out_dim") ? get_int(j, "head_out_dim", "bad_arch_spec")
                                                   : arch.vocab_size;

    if (!j.contains("layer_modules") || !j["layer_modules"].is_array())
        throw error("bad_arch_spec", "missing layer_modules array");
    std::set<std::string> names;
    for (const auto& m : j["layer_modules"]) {
        layer_module mod;
        if (!m.contains("name") || !m["name"].is_string())
            throw error("bad_arch_spec", "layer module needs a string name");
        mod.name = m["name"].get<std::string>();
        mod.in_dim = get_int(m, "in_dim", "bad_arch_spec");
        mod.out_dim = get_int(m, "out_dim", "bad_arch_spec");
        mod.has_bias = m.value("has_bias", false);
        if (mod.in_dim < 1 || mod.out_dim < 1)
            throw error("bad_arch_spec", "module dims must be >= 1: " + mod.name);
        if (!names.insert(mod.name).second)
            throw error("bad_arch_spec", "duplicate module name: " + mod.name);
        arch.layer_modules.push_back(std::move(mod));
    }

    if (j.contains("per_layer_norms")) {
        if (!j["per_layer_norms"].is_array())
            throw error("bad_arch_spec", "per_layer_norms must be an array");
        for (const auto& n : j["per_layer_norms"]) {
            layer_norm_spec norm;
            norm.name = n.value("name", "");
            norm.dim = get_int(n, "dim", "bad_arch_spec");
            if (norm.dim < 1) throw error("bad_arch_spec", "norm dim must be >= 1");
            arch.per_layer_norms.push_back(std::move(norm));
        }
    }

    if (arch.vocab_size < 1 || arch.d_model < 1 || arch.n_layers < 0 || arch.final_norm_dim < 1)
        throw error("bad_arch_spec", "dims must be >= 1 (n_layers >= 0)");
    return arch;
}

lora_config lora_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw error("bad_lora_config", "adapter config must be a JSON object");
    lora_config cfg;
    cfg.r = get_int(j, "r", "bad_lora_config");
    if (cfg.r < 1) throw error("bad_lora_config", "r must be >= 1");
    if (!j.contains("alpha") || !j["alpha"].is_number())
        throw error("bad_lora_config", "missing or non-numeric field: alpha");
    cfg.alpha = j["alpha"].get<double>();
    if (!(cfg.alpha > 0)) throw error("bad_lora_config", "alpha must be > 0");
    cfg.dropout = j.value("dropout", 0.0);
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
        throw error("bad_lora_config", "dropout must be in [0,1)");
    if (!j.contains("target_modules") || !j["target_modules"].is_array() ||
        j["target_modules"].empty())
        throw error("bad_lora_config", "target_modules must be a non-empty array");
    for (const auto& t : j["target_modules"]) {
        if (!t.is_string()) throw error("bad_lora_config", "target module names must be strings");
        cfg.target_modules.push_back(t.get<std::string>());
    }
    return cfg;
}

std::int64_t count_base_params(const arch_spec& arch) {
    std::int64_t total = checked_mul(arch.vocab_size, arch.d_model); // embedding

    std::int64_t per_layer = 0;
    for (const auto& m : arch.layer_modules) {
        per_layer = checked_add(per_layer, checked_mul(m.in_dim, m.out_dim));
        if (m.has_bias) per_layer = checked_add(per_layer, m.out_dim);
    }
    for (const auto& n : arch.per_layer_norms)
        per_layer = checked_add(per_layer, checked_mul(2, n.dim)); // weight + bias

    total = checked_add(total, checked_mul(arch.n_layers, per_layer));
    total = checked_add(total, checked_mul(2, arch.final_norm_dim));
    if (!arch.tied_head) total = checked_add(total, checked_mul(arch.d_model, arch.head_out_dim));
    return total;
}

std::int64_t count_lora_params(const arch_spec& arch, const lora_config& cfg) {
    std::int64_t per_layer = 0;
    for (const auto& pattern : cfg.target_modules) {
        bool matched = false;
        for (const auto& m : arch.layer_modules) {
            if (m.name != pattern) continue;
            matched = true;
            per_layer = checked_add(per_layer, checked_mul(cfg.r, checked_add(m.in_dim, m.out_dim)));
        }
        if (!matched)
            throw error("no_target_match", "target module matches nothing: " + pattern);
    }
    return checked_mul(arch.n_layers, per_layer);
}

std::int64_t count_all_params(const arch_spec& arch, const lora_config& cfg) {
    return checked_add(count_base_params(arch), count_lora_params(arch, cfg));
}

adapter_pair init_adapter(std::size_t in_dim, std::size_t out_dim, std::int64_t r, double alpha,
                          std::uint64_t seed) {
    if (r < 1) throw error("shape_error", "adapter rank must be >= 1");
    adapter_pair adapter;
    adapter.r = r;
    adapter.alpha = alpha;
    adapter.a = matrix(static_cast<std::size_t>(r), in_dim);
    adapter.b = matrix(out_dim, static_cast<std::size_t>(r)); // zero: fresh adapters are inert

    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    rng gen(seed);
    for (double& v : adapter.a.entries) v = gen.uniform(-bound, bound);
    return adapter;
}

std::vector<double> lora_forward(const matrix& w, const adapter_pair& adapter,
                                 const std::vector<double>& x) {
    if (x.size() != w.cols) throw error("shape_error", "input length does not match weight cols");
    check_adapter_shapes(w, adapter);

    auto y = matvec(w, x);
    const auto ax = matvec(adapter.a, x);
    const double scaling = adapter.alpha / static_cast<double>(adapter.r);
    for (std::size_t r = 0; r < adapter.b.rows; ++r) {
        double acc = 0.0;
        const double* row = adapter.b.entries.data() + r * adapter.b.cols;
        for (std::size_t c = 0; c < adapter.b.cols; ++c) acc += row[c] * ax[c];
        y[r] += scaling * acc;
    }
    return y;
}

matrix merge(const matrix& w, const adapter_pair& adapter) {
    check_adapter_shapes(w, adapter);
    matrix out = w;
    const double scaling = adapter.alpha / static_cast<double>(adapter.r);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < static_cast<std::size_t>(adapter.r); ++k)
                acc += adapter.b.at(i, k) * adapter.a.at(k, j);
            out.at(i, j) += scaling * acc;
        }
    require_finite(out.entries);
    return out;
}

double grad_check(const matrix& w, const adapter_pair& adapter, const std::vector<double>& x,
                  const std::vector<double>& target) {
    if (target.size() != w.rows)
        throw error("shape_error", "target length does not match weight rows");
    check_adapter_shapes(w, adapter);

    const double scaling = adapter.alpha / static_cast<double>(adapter.r);
    const auto y = lora_forward(w, adapter, x);
    std::vector<double> delta(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) delta[i] = y[i] - target[i];
    const auto ax = matvec(adapter.a, x);

    // dL/dB = scaling * delta (Ax)^T ; dL/dA = scaling * B^T delta x^T
    matrix grad_b(adapter.b.rows, adapter.b.cols);
    for (std::size_t i = 0; i < grad_b.rows; ++i)
        for (std::size_t j = 0; j < grad_b.cols; ++j)
            grad_b.at(i, j) = scaling * delta[i] * ax[j];

    std::vector<double> bt_delta(adapter.a.rows, 0.0); // B^T delta, length r
    for (std::size_t k = 0; k < bt_delta.size(); ++k)
        for (std::size_t i = 0; i < adapter.b.rows; ++i)
            bt_delta[k] += adapter.b.at(i, k) * delta[i];

    matrix grad_a(adapter.a.rows, adapter.a.cols);
    for (std::size_t k = 0; k < grad_a.rows; ++k)
        for (std::size_t j = 0; j < grad_a.cols; ++j)
            grad_a.at(k, j) = scaling * bt_delta[k] * x[j];

    constexpr double step = 1e-6;
    double max_err = 0.0;
    adapter_pair probe = adapter;

    for (std::size_t i = 0; i < probe.a.entries.size(); ++i) {
        const double saved = probe.a.entries[i];
        probe.a.entries[i] = saved + step;
        const double plus = loss_of(w, probe, x, target);
        probe.a.entries[i] = saved - step;
        const double minus = loss_of(w, probe, x, target);
        probe.a.entries[i] = saved;
        max_err = std::max(max_err, rel_error(grad_a.entries[i], (plus - minus) / (2 * step)));
    }
    for (std::size_t i = 0; i < probe.b.entries.size(); ++i) {
        const double saved = probe.b.entries[i];
        probe.b.entries[i] = saved + step;
        const double plus = loss_of(w, probe, x, target);
        probe.b.entries[i] = saved - step;
        const double minus = loss_of(w, probe, x, target);
        probe.b.entries[i] = saved;
        max_err = std::max(max_err, rel_error(grad_b.entries[i], (plus - minus) / (2 * step)));
    }
    return max_err;
}

quantized quantize_absmax(const matrix& w, int bits) {
    if (bits != 4 && bits != 8)
        throw error("unsupported_bits", "quantization supports 4 or 8 bits, got " +
                                            std::to_string(bits));
    require_finite(w.entries);

    const int qmax = (1 << (bits - 1)) - 1; // 7 or 127
    double absmax = 0.0;
    for (double v : w.entries) absmax = std::max(absmax, std::abs(v));

    quantized out;
    out.rows = w.rows;
    out.cols = w.cols;
    out.q.assign(w.entries.size(), 0);
    out.scale = absmax == 0.0 ? 0.0 : absmax / qmax;
    if (out.scale == 0.0) return out; // all-zero matrix reconstructs exactly

    for (std::size_t i = 0; i < w.entries.size(); ++i) {
        const long long q = std::llround(w.entries[i] / out.scale);
        out.q[i] = static_cast<std::int8_t>(std::clamp<long long>(q, -qmax, qmax));
    }
    return out;
}

matrix dequantize(const quantized& q) {
    matrix out(q.rows, q.cols);
    for (std::size_t i = 0; i < q.q.size(); ++i) out.entries[i] = q.q[i] * q.scale;
    return out;
}

std::int64_t weight_memory_bytes(std::int64_t param_count, int bits) {
    if (bits != 4 && bits != 8 && bits != 16 && bits != 32)
        throw error("unsupported_bits", "weight memory supports 4/8/16/32 bits, got " +
                                            std::to_string(bits));
    if (param_count < 0) throw error("shape_error", "negative parameter count");
    const std::int64_t bit_total = checked_mul(param_count, bits);
    return bit_total / 8 + (bit_total % 8 != 0 ? 1 : 0);
}

model_label parse_model_label(const std::string& s) {
    std::string up = s;
    std::transform(up.begin(), up.end(), up.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (up == "7B") return model_label::m7b;
    if (up == "12B") return model_label::m12b;
    if (up == "20B") return model_label::m20b;
    if (up == "30B") return model_label::m30b;
    if (up == "40B") return model_label::m40b;
    if (up == "65B") return model_label::m65b;
    throw error("bad_model_label", "unknown model label: " + s);
}

std::string model_label_name(model_label m) {
    switch (m) {
    case model_label::m7b: return "7B";
    case model_label::m12b: return "12B";
    case model_label::m20b: return "20B";
    case model_label::m30b: return "30B";
    case model_label::m40b: return "40B";
    case model_label::m65b: return "65B";
    }
    throw error("bad_model_label", "unknown model label enum");
}

int recommended_gpu(model_label m, int bits) {
    if (bits != 4 && bits != 8 && bits != 16)
        throw error("unsupported_bits", "GPU table covers 4/8/16 bits, got " +
                                            std::to_string(bits));
    // Published sizing table; 2x80GB encoded as 160.
    static constexpr int table[6][3] = {
        // 4-bit, 8-bit, 16-bit
        {16, 12, 16},   // 7B
        {16, 24, 32},   // 12B
        {16, 32, 48},   // 20B
        {24, 48, 80},   // 30B
        {48, 80, 160},  // 40B
        {48, 80, 160},  // 65B
    };
    const int row = static_cast<int>(m);
    const int col = bits == 4 ? 0 : bits == 8 ? 1 : 2;
    return table[row][col];
}

} // namespace forge::lora
