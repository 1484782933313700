#include "phyadapt/phylogeny.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "phyadapt/errors.hpp"
#include "phyadapt/rng.hpp"

namespace phyadapt {

using nlohmann::json;

const char* node_kind_name(NodeKind kind) {
    switch (kind) {
        case NodeKind::Root: return "Root";
        case NodeKind::Family: return "Family";
        case NodeKind::Genus: return "Genus";
        case NodeKind::Language: return "Language";
    }
    return "?";
}

const TreeNode& PhyloTree::at(const std::string& id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw ConfigError("tree has no node '" + id + "'");
    return it->second;
}

std::vector<std::string> PhyloTree::languages() const {
    std::vector<std::string> out;
    out.reserve(leaf_by_iso.size());
    for (const auto& [iso, id] : leaf_by_iso) out.push_back(iso);
    return out;
}

std::string PhyloTree::family_of(const std::string& iso) const {
    auto path = route(*this, iso, false);
    return at(path.front()).label;
}

namespace {

void add_node(PhyloTree& tree, TreeNode node) {
    if (tree.nodes.count(node.id)) {
        throw ValidationError("duplicate node id '" + node.id + "' (label '" + node.label + "')");
    }
    tree.nodes.emplace(node.id, std::move(node));
}

}  // namespace

PhyloTree parse_tree(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("tree spec is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("families") || !doc["families"].is_object()) {
        throw ValidationError("tree spec must be an object with a 'families' map");
    }
    PhyloTree tree;
    const std::string root_label = doc.value("root", std::string("Root"));
    tree.root_id = "R:" + root_label;
    add_node(tree, TreeNode{tree.root_id, root_label, NodeKind::Root, "", {}});

    for (auto& [family_label, genera] : doc["families"].items()) {
        if (!genera.is_object()) {
            throw ValidationError("family '" + family_label + "' must map genus labels to language lists");
        }
        const std::string family_id = "F:" + family_label;
        add_node(tree, TreeNode{family_id, family_label, NodeKind::Family, tree.root_id, {}});
        tree.nodes[tree.root_id].children.push_back(family_id);
        for (auto& [genus_label, langs] : genera.items()) {
            if (!langs.is_array()) {
                throw ValidationError("genus '" + genus_label + "' must hold a list of languages");
            }
            const std::string genus_id = "G:" + genus_label;
            add_node(tree, TreeNode{genus_id, genus_label, NodeKind::Genus, family_id, {}});
            tree.nodes[family_id].children.push_back(genus_id);
            for (auto& lang : langs) {
                std::string iso, label;
                if (lang.is_string()) {
                    iso = lang.get<std::string>();
                    label = iso;
                } else if (lang.is_object() && lang.contains("iso")) {
                    iso = lang["iso"].get<std::string>();
                    label = lang.value("label", iso);
                } else {
                    throw ValidationError("language entry under genus '" + genus_label +
                                          "' must be an iso string or {iso, label}");
                }
                if (tree.leaf_by_iso.count(iso)) {
                    throw ValidationError("duplicate language code '" + iso + "'");
                }
                const std::string leaf_id = "L:" + iso;
                add_node(tree, TreeNode{leaf_id, label, NodeKind::Language, genus_id, {}});
                tree.nodes[genus_id].children.push_back(leaf_id);
                tree.leaf_by_iso.emplace(iso, leaf_id);
            }
        }
    }
    const auto violations = validate(tree);
    if (!violations.empty()) throw ValidationError("invalid tree: " + violations.front());
    return tree;
}

PhyloTree load_tree(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open tree file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_tree(buf.str());
}

std::string serialize_tree(const PhyloTree& tree) {
    json families = json::object();
    for (const std::string& fid : tree.at(tree.root_id).children) {
        const TreeNode& family = tree.at(fid);
        json genera = json::object();
        for (const std::string& gid : family.children) {
            const TreeNode& genus = tree.at(gid);
            json langs = json::array();
            for (const std::string& lid : genus.children) {
                const TreeNode& leaf = tree.at(lid);
                langs.push_back({{"iso", lid.substr(2)}, {"label", leaf.label}});
            }
            genera[genus.label] = langs;
        }
        families[family.label] = genera;
    }
    json doc{{"format", "phyadapt-tree-v1"},
             {"root", tree.at(tree.root_id).label},
             {"families", families}};
    return doc.dump(2);
}

std::vector<std::string> route(const PhyloTree& tree, const std::string& iso, bool include_root) {
    auto it = tree.leaf_by_iso.find(iso);
    if (it == tree.leaf_by_iso.end()) {
        throw ConfigError("unknown language code '" + iso + "'");
    }
    std::vector<std::string> path;
    std::string cur = it->second;
    while (!cur.empty()) {
        path.push_back(cur);
        cur = tree.at(cur).parent;
    }
    std::reverse(path.begin(), path.end());
    if (!include_root && !path.empty() && tree.at(path.front()).kind == NodeKind::Root) {
        path.erase(path.begin());
    }
    return path;
}

std::vector<std::string> validate(const PhyloTree& tree) {
    std::vector<std::string> violations;
    if (tree.nodes.empty() || !tree.nodes.count(tree.root_id)) {
        violations.push_back("missing root node");
        return violations;
    }
    auto expected_child_kind = [](NodeKind k) {
        switch (k) {
            case NodeKind::Root: return NodeKind::Family;
            case NodeKind::Family: return NodeKind::Genus;
            case NodeKind::Genus: return NodeKind::Language;
            case NodeKind::Language: return NodeKind::Language;
        }
        return NodeKind::Language;
    };
    std::set<std::string> reachable;
    std::vector<std::string> stack{tree.root_id};
    while (!stack.empty()) {
        const std::string id = stack.back();
        stack.pop_back();
        if (!reachable.insert(id).second) {
            violations.push_back("cycle through node '" + id + "'");
            continue;
        }
        const TreeNode& node = tree.at(id);
        if (node.kind == NodeKind::Language) {
            if (!node.children.empty()) {
                violations.push_back("language '" + node.label + "' has children");
            }
            continue;
        }
        if (node.children.empty()) {
            violations.push_back("empty internal node '" + node.label + "' (" +
                                 node_kind_name(node.kind) + ")");
        }
        for (const std::string& child_id : node.children) {
            auto cit = tree.nodes.find(child_id);
            if (cit == tree.nodes.end()) {
                violations.push_back("dangling child '" + child_id + "' under '" + node.label + "'");
                continue;
            }
            if (cit->second.parent != id) {
                violations.push_back("parent link mismatch at '" + cit->second.label + "'");
            }
            if (cit->second.kind != expected_child_kind(node.kind)) {
                violations.push_back("kind order violation: " + std::string(node_kind_name(node.kind)) +
                                     " '" + node.label + "' -> " +
                                     node_kind_name(cit->second.kind) + " '" + cit->second.label + "'");
            }
            stack.push_back(child_id);
        }
    }
    for (const auto& [id, node] : tree.nodes) {
        if (!reachable.count(id)) {
            violations.push_back("orphan node '" + node.label + "'");
        }
        if (node.kind == NodeKind::Language) {
            const std::string iso = id.substr(2);
            auto lit = tree.leaf_by_iso.find(iso);
            if (lit == tree.leaf_by_iso.end() || lit->second != id) {
                violations.push_back("leaf index missing language '" + iso + "'");
            }
        }
    }
    for (const auto& [iso, id] : tree.leaf_by_iso) {
        auto nit = tree.nodes.find(id);
        if (nit == tree.nodes.end() || nit->second.kind != NodeKind::Language) {
            violations.push_back("leaf index entry '" + iso + "' is not a language node");
        }
    }
    return violations;
}

PhyloTree random_tree(const std::vector<std::string>& languages,
                      const std::vector<int>& group_sizes, uint64_t seed,
                      const std::vector<std::string>& probes) {
    int total = 0;
    for (int s : group_sizes) {
        if (s <= 0) throw ConfigError("random_tree: group sizes must be positive");
        total += s;
    }
    if (total != static_cast<int>(languages.size())) {
        throw ConfigError("random_tree: group sizes sum to " + std::to_string(total) + " but " +
                          std::to_string(languages.size()) + " languages were given");
    }
    if (probes.size() > group_sizes.size()) {
        throw ConfigError("random_tree: more probe languages than groups");
    }
    std::set<std::string> lang_set(languages.begin(), languages.end());
    if (lang_set.size() != languages.size()) {
        throw ConfigError("random_tree: duplicate language codes");
    }
    for (const auto& p : probes) {
        if (!lang_set.count(p)) throw ConfigError("random_tree: probe '" + p + "' not in languages");
    }

    std::vector<std::string> order(lang_set.begin(), lang_set.end());  // sorted, deterministic
    Rng rng(derive_seed(seed, "random-tree"));
    std::vector<int> group_of(order.size());
    for (int attempt = 0;; ++attempt) {
        if (attempt > 1000000) throw ConfigError("random_tree: probe constraint unsatisfiable");
        std::vector<std::string> perm = order;
        rng.shuffle(perm);
        std::map<std::string, int> assign;
        int pos = 0;
        for (size_t g = 0; g < group_sizes.size(); ++g) {
            for (int i = 0; i < group_sizes[g]; ++i) assign[perm[static_cast<size_t>(pos++)]] = static_cast<int>(g);
        }
        std::set<int> probe_groups;
        bool ok = true;
        for (const auto& p : probes) {
            if (!probe_groups.insert(assign[p]).second) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        for (size_t i = 0; i < order.size(); ++i) group_of[i] = assign[order[i]];
        break;
    }

    json genera = json::object();
    for (size_t g = 0; g < group_sizes.size(); ++g) {
        json langs = json::array();
        for (size_t i = 0; i < order.size(); ++i) {
            if (group_of[i] == static_cast<int>(g)) {
                langs.push_back({{"iso", order[i]}, {"label", order[i]}});
            }
        }
        genera["R" + std::to_string(g + 1)] = langs;
    }
    json doc{{"format", "phyadapt-tree-v1"},
             {"root", "Root"},
             {"families", json{{"Random", genera}}}};
    return parse_tree(doc.dump());
}

std::string default_tree_dir() {
    if (const char* env = std::getenv("PHYADAPT_DATA_DIR")) return std::string(env) + "/trees";
#ifdef PHYADAPT_SOURCE_DATA_DIR
    return std::string(PHYADAPT_SOURCE_DATA_DIR) + "/trees";
#else
    return "data/trees";
#endif
}

}  // namespace phyadapt
