#pragma once

#include <map>
#include <string>
#include <vector>

#include "pampose/autograd.hpp"

namespace pampose::checkpoint {

// Binary checkpoint: 8-byte magic "PAMPOSE1", little-endian u64 manifest
// length, JSON manifest (config echo plus per-array name/shape/offset),
// then the raw little-endian f64 arrays. See docs/formats.md.

struct Entry {
    std::string name;
    ag::Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    std::map<std::string, std::string> config;
    std::vector<Entry> entries;
};

// Serializes every named parameter of the graph in creation order.
void save(const std::string& path, const ag::Graph& graph,
          const std::map<std::string, std::string>& config);

Checkpoint read(const std::string& path);

// Copies stored arrays into the graph's identically named parameters.
// Any name/shape mismatch or missing parameter throws VersionError.
void restore(ag::Graph& graph, const Checkpoint& ckpt);

}  // namespace pampose::checkpoint
