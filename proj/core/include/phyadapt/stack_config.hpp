#pragma once

#include <optional>
#include <string>
#include <vector>

namespace phyadapt {

// Stack codes from the experiment grid. Letters name tree levels whose
// adapters participate, root-first; T is the task adapter on top.
enum class StackCode { T, LT, FT, FGT, FLT, FGLT, LLLT, RFGLT };

const char* stack_code_name(StackCode code);
StackCode stack_code_from_name(const std::string& name);

// Tree levels contributing language-side adapters for a code.
enum class TreeLevel { Root, Family, Genus, Language };
std::vector<TreeLevel> stack_levels(StackCode code);

// LLLT stacks this many copies of the language adapter.
constexpr int kTripleStackCopies = 3;

struct StackConfig {
    StackCode code = StackCode::FGLT;
    // Zero-shot swap: adapter of this language substitutes for a missing
    // target-language adapter.
    std::optional<std::string> language_override;
    bool include_root = false;  // true only for RFGLT

    static StackConfig from_code(StackCode code) {
        StackConfig c;
        c.code = code;
        c.include_root = code == StackCode::RFGLT;
        return c;
    }
};

}  // namespace phyadapt
