#include "pampose/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace pampose::checkpoint {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'M', 'P', 'O', 'S', 'E', '1'};

void write_u64(std::ofstream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::ifstream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void save(const std::string& path, const ag::Graph& graph,
          const std::map<std::string, std::string>& config) {
    nlohmann::json manifest;
    manifest["config"] = config;
    nlohmann::json params = nlohmann::json::array();

    const auto tensors = graph.parameters();
    std::uint64_t offset = 0;
    for (ag::Tensor t : tensors) {
        nlohmann::json p;
        p["name"] = graph.name(t);
        p["shape"] = graph.shape(t);
        p["offset"] = offset;
        params.push_back(p);
        offset += graph.values(t).size() * sizeof(double);
    }
    manifest["params"] = params;
    const std::string mtext = manifest.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw IoError("checkpoint: cannot open '" + path + "' for writing");
    }
    os.write(kMagic, 8);
    write_u64(os, mtext.size());
    os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (ag::Tensor t : tensors) {
        const auto v = graph.values(t);
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!os) {
        throw IoError("checkpoint: write failed for '" + path + "'");
    }
}

Checkpoint read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("checkpoint: cannot open '" + path + "'");
    }
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw VersionError("checkpoint: bad magic in '" + path + "' (expected PAMPOSE1)");
    }
    const std::uint64_t mlen = read_u64(is);
    std::string mtext(mlen, '\0');
    is.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!is) {
        throw IoError("checkpoint: truncated manifest in '" + path + "'");
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const std::exception& e) {
        throw VersionError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
    }

    Checkpoint out;
    if (manifest.contains("config")) {
        for (auto it = manifest["config"].begin(); it != manifest["config"].end(); ++it) {
            out.config[it.key()] = it.value().get<std::string>();
        }
    }
    if (!manifest.contains("params") || !manifest["params"].is_array()) {
        throw VersionError("checkpoint: manifest lacks params array");
    }
    const std::streampos data_start = is.tellg();
    for (const auto& p : manifest["params"]) {
        Entry e;
        e.name = p.at("name").get<std::string>();
        e.shape = p.at("shape").get<ag::Shape>();
        const std::uint64_t offset = p.at("offset").get<std::uint64_t>();
        const std::int64_t count = ag::numel(e.shape);
        e.values.resize(static_cast<std::size_t>(count));
        is.seekg(data_start + static_cast<std::streamoff>(offset));
        is.read(reinterpret_cast<char*>(e.values.data()),
                static_cast<std::streamsize>(e.values.size() * sizeof(double)));
        if (!is) {
            throw IoError("checkpoint: truncated data for array '" + e.name + "'");
        }
        out.entries.push_back(std::move(e));
    }
    return out;
}

void restore(ag::Graph& graph, const Checkpoint& ckpt) {
    std::map<std::string, ag::Tensor> by_name;
    for (ag::Tensor t : graph.parameters()) by_name[graph.name(t)] = t;
    std::size_t matched = 0;
    for (const Entry& e : ckpt.entries) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) {
            throw VersionError("checkpoint: parameter '" + e.name +
                               "' does not exist in this network");
        }
        if (graph.shape(it->second) != e.shape) {
            throw VersionError("checkpoint: parameter '" + e.name + "' has shape " +
                               ag::shape_str(e.shape) + " on disk but " +
                               ag::shape_str(graph.shape(it->second)) + " in the network");
        }
        auto dst = graph.leaf_values(it->second);
        std::copy(e.values.begin(), e.values.end(), dst.begin());
        ++matched;
    }
    if (matched != by_name.size()) {
        throw VersionError("checkpoint: stores " + std::to_string(matched) + " of " +
                           std::to_string(by_name.size()) + " network parameters");
    }
}

}  // namespace pampose::checkpoint
