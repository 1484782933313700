#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phyadapt/adapters.hpp"
#include "phyadapt/corpus.hpp"
#include "phyadapt/encoder.hpp"
#include "phyadapt/tasks.hpp"

namespace phyadapt {

// Container layout (all integers little-endian):
//   8 bytes   magic "PHYADPT1"
//   u32       container version (1)
//   u32       header length in bytes
//   header    UTF-8 JSON: kind, config/meta, tensor manifest
//   u64       FNV-1a checksum of the payload bytes
//   payload   float64 values, little-endian, in manifest order
constexpr char kCheckpointMagic[9] = "PHYADPT1";

struct CheckpointInfo {
    std::string kind;
    uint32_t version = 0;
    uint64_t payload_checksum = 0;
    struct Entry {
        std::string name;
        std::vector<int> shape;
        int64_t count = 0;
    };
    std::vector<Entry> tensors;
    std::string header_json;

    int64_t total_params() const;
};

CheckpointInfo inspect_checkpoint(const std::string& path);

void save_backbone(const std::string& path, const Backbone& backbone, const Vocab& vocab);
Backbone load_backbone(const std::string& path, Vocab* vocab_out = nullptr);

void save_adapter_bank(const std::string& path, const AdapterBank& bank);
AdapterBank load_adapter_bank(const std::string& path);

void save_task_adapter(const std::string& path, const TaskAdapter& task);
TaskAdapter load_task_adapter(const std::string& path);

}  // namespace phyadapt
