#include "cbfkit/checkpoint.hpp"

#include "cbfkit/io.hpp"
#include "serializers.hpp"

namespace cbfkit {

namespace ju = jsonutil;
using ju::json;

namespace {

constexpr const char* kFormatTag = "cbfkit-checkpoint-v1";

json layers_to_json(const MlpParams& p) {
    json layers = json::array();
    for (std::size_t l = 0; l < p.W.size(); ++l) {
        json layer;
        layer["rows"] = p.W[l].rows;
        layer["cols"] = p.W[l].cols;
        layer["weights"] = p.W[l].a;
        layer["bias"] = p.b[l];
        layers.push_back(std::move(layer));
    }
    return layers;
}

MlpParams layers_from_json(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) ju::fail(path, "expected a nonempty array of layers");
    MlpParams p;
    for (std::size_t l = 0; l < j.size(); ++l) {
        const std::string lp = path + "[" + std::to_string(l) + "]";
        const json& layer = j[l];
        const long rows = ju::as_int(ju::member(layer, "rows", lp), lp + ".rows");
        const long cols = ju::as_int(ju::member(layer, "cols", lp), lp + ".cols");
        if (rows < 1 || cols < 1) ju::fail(lp, "rows/cols must be positive");
        Mat W(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
        Vec w = ju::as_vec(ju::member(layer, "weights", lp), lp + ".weights");
        if (w.size() != W.size()) ju::fail(lp + ".weights", "length must equal rows*cols");
        W.a = std::move(w);
        Vec b = ju::as_vec(ju::member(layer, "bias", lp), lp + ".bias");
        if (b.size() != static_cast<std::size_t>(rows))
            ju::fail(lp + ".bias", "length must equal rows");
        p.W.push_back(std::move(W));
        p.b.push_back(std::move(b));
    }
    for (std::size_t l = 0; l + 1 < p.W.size(); ++l)
        if (p.W[l + 1].cols != p.W[l].rows)
            ju::fail(path, "layer " + std::to_string(l + 1) + " width does not chain");
    if (p.W.back().rows != 1) ju::fail(path, "final layer must map to one output");
    return p;
}

void check_same_shape(const MlpParams& a, const MlpParams& b, const std::string& path) {
    bool ok = a.W.size() == b.W.size();
    for (std::size_t l = 0; ok && l < a.W.size(); ++l)
        ok = a.W[l].rows == b.W[l].rows && a.W[l].cols == b.W[l].cols;
    if (!ok) ju::fail(path, "optimizer state shape does not match the layers");
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    json j;
    j["format"] = kFormatTag;
    j["system"] = ju::system_to_json(ck.system);
    j["environment"] = ju::environment_to_json(ck.environment);
    j["model"] = ju::model_to_json(ck.model, true);
    j["normalization"] = {{"center", ck.params.in_center}, {"half", ck.params.in_half}};
    j["step"] = ck.step;
    j["layers"] = layers_to_json(ck.params);
    if (ck.has_optimizer)
        j["optimizer"] = {{"m", layers_to_json(ck.adam_m)}, {"v", layers_to_json(ck.adam_v)}};
    write_text_file_atomic(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    const json j = ju::parse_text(read_text_file(path), "checkpoint");
    const std::string tag = ju::as_str(ju::member(j, "format", "checkpoint"), "checkpoint.format");
    if (tag != kFormatTag)
        ju::fail("checkpoint.format", "unsupported tag '" + tag + "'");
    Checkpoint ck;
    ck.system = ju::system_from_json(ju::member(j, "system", "checkpoint"), "system");
    ck.environment =
        ju::environment_from_json(ju::member(j, "environment", "checkpoint"), "environment");
    ck.model = ju::model_from_json(ju::member(j, "model", "checkpoint"), "model");
    ck.step = ju::as_int(ju::member(j, "step", "checkpoint"), "checkpoint.step");
    ck.params = layers_from_json(ju::member(j, "layers", "checkpoint"), "layers");
    ck.params.out_sharpness = ck.model.out_sharpness;

    const json& norm = ju::member(j, "normalization", "checkpoint");
    ck.params.in_center = ju::as_vec(ju::member(norm, "center", "normalization"),
                                     "normalization.center");
    ck.params.in_half = ju::as_vec(ju::member(norm, "half", "normalization"),
                                   "normalization.half");

    if (ck.model.input_dim != ck.params.input_dim())
        ju::fail("model.input_dim", "does not match the first layer");
    if (ck.params.in_center.size() != static_cast<std::size_t>(ck.model.input_dim) ||
        ck.params.in_half.size() != ck.params.in_center.size())
        ju::fail("normalization", "spans must have input_dim entries");
    ck.model.in_center = ck.params.in_center;
    ck.model.in_half = ck.params.in_half;
    validate_config(ck.model);
    if (ck.params.layer_count() != ck.model.hidden_layers + 1)
        ju::fail("layers", "count does not match model.hidden_layers");

    if (const json* opt = ju::member_opt(j, "optimizer", "checkpoint")) {
        ck.adam_m = layers_from_json(ju::member(*opt, "m", "optimizer"), "optimizer.m");
        ck.adam_v = layers_from_json(ju::member(*opt, "v", "optimizer"), "optimizer.v");
        check_same_shape(ck.adam_m, ck.params, "optimizer.m");
        check_same_shape(ck.adam_v, ck.params, "optimizer.v");
        ck.has_optimizer = true;
    }
    return ck;
}

}  // namespace cbfkit
