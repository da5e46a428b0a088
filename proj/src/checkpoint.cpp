#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "spanft/error.hpp"
#include "spanft/model.hpp"

namespace spanft::model {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "SPANFT-CHECKPOINT";

json config_to_json(const ModelConfig & c) {
    return {{"vocab_size", c.vocab_size},   {"context_length", c.context_length}, {"n_layers", c.n_layers},
            {"d_model", c.d_model},         {"n_heads", c.n_heads},               {"seed", c.seed}};
}

ModelConfig config_from_json(const json & j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.context_length = j.at("context_length").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

} // namespace

void save_checkpoint(std::ostream & out, const Checkpoint & checkpoint) {
    json layout = json::array();
    for (const auto & spec : checkpoint.parameters.layout) {
        layout.push_back({{"name", spec.name}, {"shape", spec.shape}, {"offset", spec.offset}, {"size", spec.size}});
    }
    const json header{{"schema_version", kCheckpointSchemaVersion},
                      {"config", config_to_json(checkpoint.config)},
                      {"vocab_tag", checkpoint.vocab_tag},
                      {"vocabulary", checkpoint.vocabulary},
                      {"layout", layout},
                      {"parameter_count", checkpoint.parameters.values.size()},
                      {"parameter_hash", parameter_hash(checkpoint.parameters)}};
    out << kMagic << '\n' << header.dump() << '\n';
    out.write(reinterpret_cast<const char *>(checkpoint.parameters.values.data()),
              static_cast<std::streamsize>(checkpoint.parameters.values.size() * sizeof(double)));
    if (!out) {
        fail(ErrorKind::IoError, "failed to write checkpoint");
    }
}

Checkpoint load_checkpoint(std::istream & in) {
    std::string magic;
    std::string header_line;
    if (!std::getline(in, magic) || magic != kMagic || !std::getline(in, header_line)) {
        fail(ErrorKind::SchemaError, "not a checkpoint file");
    }
    const json header = json::parse(header_line, nullptr, false);
    if (header.is_discarded() || !header.is_object()) {
        fail(ErrorKind::SchemaError, "checkpoint header is not a JSON object");
    }
    Checkpoint checkpoint;
    std::string expected_hash;
    try {
        if (header.at("schema_version").get<int>() != kCheckpointSchemaVersion) {
            fail(ErrorKind::SchemaError, "unsupported checkpoint schema version");
        }
        checkpoint.config = config_from_json(header.at("config"));
        checkpoint.vocab_tag = header.at("vocab_tag").get<std::string>();
        checkpoint.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
        for (const auto & entry : header.at("layout")) {
            checkpoint.parameters.layout.push_back({entry.at("name").get<std::string>(),
                                                    entry.at("shape").get<std::vector<std::size_t>>(),
                                                    entry.at("offset").get<std::size_t>(),
                                                    entry.at("size").get<std::size_t>()});
        }
        checkpoint.parameters.values.resize(header.at("parameter_count").get<std::size_t>());
        expected_hash = header.at("parameter_hash").get<std::string>();
    } catch (const json::exception & e) {
        fail(ErrorKind::SchemaError, std::string("checkpoint header: ") + e.what());
    }
    if (checkpoint.parameters.layout != parameter_layout(checkpoint.config)) {
        fail(ErrorKind::ShapeMismatch, "checkpoint layout does not match its configuration");
    }
    auto & values = checkpoint.parameters.values;
    in.read(reinterpret_cast<char *>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != values.size() * sizeof(double)) {
        fail(ErrorKind::SchemaError, "checkpoint payload is truncated");
    }
    if (parameter_hash(checkpoint.parameters) != expected_hash) {
        fail(ErrorKind::SchemaError, "checkpoint payload hash mismatch");
    }
    return checkpoint;
}

void save_checkpoint(const std::string & path, const Checkpoint & checkpoint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::IoError, "cannot write " + path);
    }
    save_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open " + path);
    }
    return load_checkpoint(in);
}

std::string parameter_hash(const ParameterVector & parameters) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    const auto * bytes = reinterpret_cast<const unsigned char *>(parameters.values.data());
    for (std::size_t i = 0; i < parameters.values.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Model model_from_checkpoint(const Checkpoint & checkpoint) {
    Model model(checkpoint.config);
    model.set_parameters(checkpoint.parameters);
    return model;
}

} // namespace spanft::model
