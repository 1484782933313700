#include <doctest.h>

#include <array>
#include <fstream>
#include <map>
#include <set>

#include "phyadapt/errors.hpp"
#include "phyadapt/phylogeny.hpp"

using namespace phyadapt;

namespace {

std::string uralic_json() {
    return R"({
      "format": "phyadapt-tree-v1",
      "families": {
        "Uralic": {
          "Finnic": ["fin", "est", "krl", "olo"],
          "Hungarian": ["hun"],
          "Mordvinic": ["mdf", "myv"],
          "Permic": ["koi", "kpv"],
          "Sami": ["sme", "sms"]
        }
      }
    })";
}

}  // namespace

TEST_SUITE("phylogeny") {

TEST_CASE("uralic tree parses with 5 genera and 11 leaves") {
    const PhyloTree tree = parse_tree(uralic_json());
    CHECK(tree.leaf_by_iso.size() == 11);
    int genera = 0;
    for (const auto& [id, node] : tree.nodes) genera += node.kind == NodeKind::Genus;
    CHECK(genera == 5);
    CHECK(validate(tree).empty());
}

TEST_CASE("single-language tree parses") {
    const PhyloTree tree = parse_tree(R"({"families": {"F": {"G": ["xxx"]}}})");
    CHECK(tree.leaf_by_iso.size() == 1);
    CHECK(validate(tree).empty());
}

TEST_CASE("language under two genera is a duplicate-code error") {
    CHECK_THROWS_WITH_AS(
        parse_tree(R"({"families": {"F": {"G1": ["aaa"], "G2": ["aaa"]}}})"),
        doctest::Contains("duplicate language code 'aaa'"), ValidationError);
}

TEST_CASE("route returns the root-first path") {
    const PhyloTree tree = parse_tree(uralic_json());
    const auto path = route(tree, "krl");
    REQUIRE(path.size() == 3);
    CHECK(path[0] == "F:Uralic");
    CHECK(path[1] == "G:Finnic");
    CHECK(path[2] == "L:krl");
}

TEST_CASE("route with include_root yields a 4-element path") {
    const PhyloTree tree = parse_tree(uralic_json());
    const auto path = route(tree, "sms", /*include_root=*/true);
    REQUIRE(path.size() == 4);
    CHECK(tree.at(path[0]).kind == NodeKind::Root);
    CHECK(path[3] == "L:sms");
}

TEST_CASE("route rejects unknown codes") {
    const PhyloTree tree = parse_tree(uralic_json());
    CHECK_THROWS_WITH_AS(route(tree, "zzz"), doctest::Contains("zzz"), ConfigError);
}

TEST_CASE("route is prefix-closed: dropping the leaf gives the genus context") {
    const PhyloTree tree = parse_tree(uralic_json());
    for (const auto& [iso, leaf] : tree.leaf_by_iso) {
        const auto path = route(tree, iso);
        REQUIRE(path.size() == 3);
        CHECK(tree.at(path[2]).parent == path[1]);
        CHECK(tree.at(path[1]).parent == path[0]);
    }
}

TEST_CASE("serialize then parse is the identity on valid trees") {
    const PhyloTree tree = parse_tree(uralic_json());
    const PhyloTree round = parse_tree(serialize_tree(tree));
    CHECK(serialize_tree(round) == serialize_tree(tree));
    CHECK(round.leaf_by_iso == tree.leaf_by_iso);
}

TEST_CASE("validate flags kind-order violations and empty internal nodes") {
    // Constructed by hand: genus directly under root.
    PhyloTree bad;
    bad.root_id = "R:Root";
    bad.nodes["R:Root"] = {"R:Root", "Root", NodeKind::Root, "", {"G:X"}};
    bad.nodes["G:X"] = {"G:X", "X", NodeKind::Genus, "R:Root", {"L:aaa"}};
    bad.nodes["L:aaa"] = {"L:aaa", "aaa", NodeKind::Language, "G:X", {}};
    bad.leaf_by_iso["aaa"] = "L:aaa";
    auto violations = validate(bad);
    REQUIRE(!violations.empty());
    bool kind_order = false;
    for (const auto& v : violations) kind_order = kind_order || v.find("kind order") != std::string::npos;
    CHECK(kind_order);

    PhyloTree empty_family;
    empty_family.root_id = "R:Root";
    empty_family.nodes["R:Root"] = {"R:Root", "Root", NodeKind::Root, "", {"F:X"}};
    empty_family.nodes["F:X"] = {"F:X", "X", NodeKind::Family, "R:Root", {}};
    violations = validate(empty_family);
    bool empty_internal = false;
    for (const auto& v : violations) {
        empty_internal = empty_internal || v.find("empty internal node") != std::string::npos;
    }
    CHECK(empty_internal);
}

TEST_CASE("random_tree: shapes, determinism, probe pinning") {
    const std::vector<std::string> langs{"bul", "gle", "urb", "baq", "kpv",
                                         "tel", "fao", "heb", "hin"};
    const std::vector<std::string> probes{"fao", "kpv", "urb"};
    const PhyloTree t1 = random_tree(langs, {3, 3, 3}, 99, probes);
    const PhyloTree t2 = random_tree(langs, {3, 3, 3}, 99, probes);
    CHECK(serialize_tree(t1) == serialize_tree(t2));
    CHECK(validate(t1).empty());
    CHECK(t1.leaf_by_iso.size() == 9);

    int genera = 0;
    for (const auto& [id, node] : t1.nodes) {
        if (node.kind == NodeKind::Genus) {
            ++genera;
            CHECK(node.children.size() == 3);
        }
    }
    CHECK(genera == 3);

    // Probes land in distinct groups for every seed.
    for (uint64_t seed = 0; seed < 200; ++seed) {
        const PhyloTree t = random_tree(langs, {3, 3, 3}, seed, probes);
        std::set<std::string> groups;
        for (const auto& p : probes) groups.insert(t.at(t.leaf_by_iso.at(p)).parent);
        CHECK(groups.size() == 3);
    }
}

TEST_CASE("random_tree rejects size mismatches") {
    CHECK_THROWS_AS(random_tree({"a", "b", "c"}, {2, 2}, 0), ConfigError);
}

TEST_CASE("random_tree non-probe group shares match the unconstrained share (chi-squared)") {
    // 9 languages in groups of 3 with 3 pinned probes: conditioned on the
    // pinning, each non-probe is uniform over groups, share 1/3.
    const std::vector<std::string> langs{"bul", "gle", "urb", "baq", "kpv",
                                         "tel", "fao", "heb", "hin"};
    const std::vector<std::string> probes{"fao", "kpv", "urb"};
    const int trials = 10000;
    std::map<std::string, std::array<int, 3>> counts;
    for (uint64_t seed = 0; seed < trials; ++seed) {
        const PhyloTree t = random_tree(langs, {3, 3, 3}, seed, probes);
        for (const auto& iso : langs) {
            const std::string genus = t.at(t.leaf_by_iso.at(iso)).parent;
            const int g = genus == "G:R1" ? 0 : genus == "G:R2" ? 1 : 2;
            ++counts[iso][static_cast<size_t>(g)];
        }
    }
    // chi-squared with 2 dof; p > 0.001 means statistic < 13.816.
    for (const std::string iso : {"bul", "gle", "baq", "tel", "heb", "hin"}) {
        const auto& c = counts[iso];
        const double expected = trials / 3.0;
        double chi2 = 0.0;
        for (int g = 0; g < 3; ++g) {
            const double d = c[static_cast<size_t>(g)] - expected;
            chi2 += d * d / expected;
        }
        CAPTURE(iso);
        CHECK(chi2 < 13.816);
    }
}

TEST_CASE("shipped tree files parse and validate") {
    const std::string dir = default_tree_dir();
    const std::map<std::string, std::pair<int, int>> expect = {
        {"germanic.json", {2, 12}},  {"uralic.json", {5, 11}},    {"tupian.json", {3, 9}},
        {"uto_aztecan.json", {5, 9}}, {"indo_european.json", {7, 48}}};
    for (const auto& [file, shape] : expect) {
        const PhyloTree tree = load_tree(dir + "/" + file);
        CAPTURE(file);
        CHECK(validate(tree).empty());
        int genera = 0;
        for (const auto& [id, node] : tree.nodes) genera += node.kind == NodeKind::Genus;
        CHECK(genera == shape.first);
        CHECK(static_cast<int>(tree.leaf_by_iso.size()) == shape.second);
    }
    // The Indo-European tree routes with a root adapter.
    const PhyloTree ie = load_tree(dir + "/indo_european.json");
    const auto path = route(ie, "gle", /*include_root=*/true);
    REQUIRE(path.size() == 4);
    CHECK(path[0] == "R:IndoEuropean");
    CHECK(path[1] == "F:Celtic");
}

}  // TEST_SUITE
