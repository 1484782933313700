#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace phyadapt {

enum class NodeKind { Root, Family, Genus, Language };

const char* node_kind_name(NodeKind kind);

struct TreeNode {
    std::string id;      // "R:<label>", "F:<label>", "G:<label>", "L:<iso>"
    std::string label;
    NodeKind kind = NodeKind::Language;
    std::string parent;  // empty only for the root
    std::vector<std::string> children;
};

// Language hierarchy with strictly ordered kinds along every path:
// Root -> Family -> Genus -> Language. Every Language node is a leaf.
struct PhyloTree {
    std::map<std::string, TreeNode> nodes;
    std::string root_id;
    std::map<std::string, std::string> leaf_by_iso;

    const TreeNode& at(const std::string& id) const;
    bool has_language(const std::string& iso) const { return leaf_by_iso.count(iso) > 0; }
    std::vector<std::string> languages() const;  // sorted iso codes
    // Family label a language belongs to.
    std::string family_of(const std::string& iso) const;
};

// Tree spec file: JSON object with "format", optional "root" label, and
// "families": { family label -> { genus label -> [ {iso, label} ] } }.
PhyloTree parse_tree(const std::string& json_text);
PhyloTree load_tree(const std::string& path);
std::string serialize_tree(const PhyloTree& tree);

// Root-first adapter path for a language: [R,] F, G, L.
std::vector<std::string> route(const PhyloTree& tree, const std::string& iso,
                               bool include_root = false);

// All invariant violations (empty means the tree is valid). Pure check;
// parse_tree throws on the same conditions.
std::vector<std::string> validate(const PhyloTree& tree);

// Counterfactual tree: one synthetic family whose genera R1..Rk have the
// given sizes; languages are assigned by a seeded uniform permutation. If
// probe languages are supplied, the permutation is redrawn until every
// probe lands in a distinct group (rejection keeps the distribution
// uniform over admissible assignments).
PhyloTree random_tree(const std::vector<std::string>& languages,
                      const std::vector<int>& group_sizes, uint64_t seed,
                      const std::vector<std::string>& probes = {});

// Directory with the tree files shipped with the library (compile-time
// source path; callers may override with PHYADAPT_DATA_DIR env var).
std::string default_tree_dir();

}  // namespace phyadapt
