// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include <unistd.h>

#include <algorithm>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <set>
#include <sstream>

#include "spectre/fsutil.hpp"

namespace oracle {

namespace fs = std::filesystem;
using namespace spectre;

namespace {

void walk_pstree(const json& nodes, std::vector<Row>& out) {
    for (const auto& n : nodes) {
        out.push_back({json::array({n["PID"], n["CreateTime"], n["ImageFileName"]}).dump(), n});
        walk_pstree(n["__children"], out);
    }
}

template <class T>
std::vector<Row> flat_rows(const std::vector<T>& items, std::initializer_list<const char*> key_fields) {
    std::vector<Row> out;
    for (const auto& item : items) {
        json rec = to_volatility_json(item);
        json key = json::array();
        for (const char* f : key_fields) key.push_back(rec[f]);
        out.push_back({key.dump(), rec});
    }
    return out;
}

const Row* find_row(const std::vector<Row>& rows, const std::string& key) {
    for (const auto& r : rows)
        if (r.key == key) return &r;
    return nullptr;
}

}  // namespace

std::vector<Row> rows(const Snapshot& s, EntityClass cls) {
    switch (cls) {
        case EntityClass::processes: {
            std::vector<Row> out;
            walk_pstree(json::parse(serialize_pstree(s.processes)), out);
            return out;
        }
        case EntityClass::connections:
            return flat_rows(s.connections, {"Proto", "LocalAddr", "LocalPort", "ForeignAddr", "ForeignPort", "PID"});
        case EntityClass::users: return flat_rows(s.users, {"rid"});
        case EntityClass::modules: return flat_rows(s.modules, {"Pid", "MappedPath", "Base"});
        case EntityClass::registry: return flat_rows(s.registry, {"hive", "key_path", "value_name"});
    }
    return {};
}

std::vector<std::pair<std::string, std::string>> compared_fields(EntityClass cls) {
    switch (cls) {
        case EntityClass::processes:
            return {{"threads", "Threads"}, {"handles", "Handles"}, {"exit_time", "ExitTime"}, {"session_id", "SessionId"}};
        case EntityClass::connections: return {{"state", "State"}, {"created", "Created"}};
        case EntityClass::users: return {{"lmhash", "lmhash"}, {"nthash", "nthash"}, {"user", "User"}};
        case EntityClass::modules: return {{"in_load", "InLoad"}, {"in_init", "InInit"}, {"in_mem", "InMem"}};
        case EntityClass::registry: return {{"value_data", "value_data"}, {"last_write", "last_write"}};
    }
    return {};
}

ClassDelta brute_force_delta(const Snapshot& before, const Snapshot& after, EntityClass cls) {
    auto b = rows(before, cls);
    auto a = rows(after, cls);
    ClassDelta d;
    for (const auto& row : b)
        if (!find_row(a, row.key)) d.removed.push_back({cls, row.key});
    for (const auto& row : a) {
        const Row* old = find_row(b, row.key);
        if (!old) {
            d.added.push_back({cls, row.key});
            continue;
        }
        std::vector<FieldChange> changes;
        for (const auto& [name, vol] : compared_fields(cls))
            if (old->record[vol] != row.record[vol]) changes.push_back({name, old->record[vol], row.record[vol]});
        if (changes.empty())
            d.consistent.push_back({cls, row.key});
        else
            d.updated.push_back({{cls, row.key}, changes});
    }
    auto by_key = [](const auto& x, const auto& y) { return x < y; };
    std::sort(d.added.begin(), d.added.end(), by_key);
    std::sort(d.removed.begin(), d.removed.end(), by_key);
    std::sort(d.consistent.begin(), d.consistent.end(), by_key);
    std::sort(d.updated.begin(), d.updated.end(),
              [](const UpdatedEntity& x, const UpdatedEntity& y) { return x.key < y.key; });
    return d;
}

std::size_t key_union_size(const Snapshot& before, const Snapshot& after, EntityClass cls) {
    std::set<std::string> keys;
    for (const auto& r : rows(before, cls)) keys.insert(r.key);
    for (const auto& r : rows(after, cls)) keys.insert(r.key);
    return keys.size();
}

// -- random inputs ---------------------------------------------------------

namespace {

std::size_t below(std::mt19937_64& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }
bool coin(std::mt19937_64& rng, double p) { return std::bernoulli_distribution(p)(rng); }

Timestamp minute(std::size_t m) { return timestamp_from_unix(1729400000 + static_cast<std::int64_t>(m) * 60); }

const char* kImages[] = {"svchost.exe", "explorer.exe", "cmd.exe", "rundll32.exe", "chrome.exe", "lsass.exe"};
const char* kStates[] = {"ESTABLISHED", "LISTENING", "CLOSE_WAIT", "TIME_WAIT", "SYN_SENT"};

ProcessNode random_process(std::mt19937_64& rng) {
    ProcessNode n;
    n.pid = 1000 + static_cast<std::int64_t>(below(rng, 250));
    if (!coin(rng, 0.1)) n.create_time = minute(below(rng, 3));
    n.image_file_name = kImages[below(rng, std::size(kImages))];
    n.threads = 1 + static_cast<std::int64_t>(below(rng, 4));
    if (coin(rng, 0.3)) n.handles = static_cast<std::int64_t>(below(rng, 3));
    if (coin(rng, 0.2)) n.exit_time = minute(10 + below(rng, 2));
    if (coin(rng, 0.8)) n.session_id = static_cast<std::int64_t>(below(rng, 2));
    n.offset_v = below(rng, 1u << 30);
    return n;
}

Connection random_connection(std::mt19937_64& rng) {
    Connection c;
    c.proto = spectre::kAllProtos[below(rng, 4)];
    bool v6 = c.proto == Proto::TCPv6 || c.proto == Proto::UDPv6;
    c.local_addr = v6 ? "::" : "10.0.0." + std::to_string(1 + below(rng, 3));
    c.local_port = static_cast<std::uint16_t>(below(rng, 6) == 0 ? 0 : 49152 + below(rng, 20));
    c.foreign_addr = v6 ? "2001:4860:4860::8888" : "8.8.8." + std::to_string(below(rng, 4));
    c.foreign_port = static_cast<std::uint16_t>(below(rng, 3) * 443);
    if (!coin(rng, 0.1)) c.pid = 1000 + static_cast<std::int64_t>(below(rng, 20));
    bool tcp = c.proto == Proto::TCPv4 || c.proto == Proto::TCPv6;
    if (tcp) c.state = kStates[below(rng, std::size(kStates))];
    if (coin(rng, 0.5)) c.created = minute(below(rng, 3));
    c.seen_by_netstat = coin(rng, 0.7);
    c.seen_by_netscan = !c.seen_by_netstat || coin(rng, 0.5);
    return c;
}

UserRecord random_user(std::mt19937_64& rng) {
    static const char* hashes[] = {"aad3b435b51404eeaad3b435b51404ee", "31d6cfe0d16ae931b73c59d7e0c089c0",
                                   "0123456789abcdef0123456789abcdef"};
    UserRecord u;
    u.rid = 500 + static_cast<std::int64_t>(below(rng, 400));
    u.user = "user" + std::to_string(below(rng, 3));
    u.lmhash = hashes[below(rng, 3)];
    u.nthash = hashes[below(rng, 3)];
    return u;
}

ModuleRecord random_module(std::mt19937_64& rng) {
    ModuleRecord m;
    m.pid = 1000 + static_cast<std::int64_t>(below(rng, 20));
    m.process = "proc.exe";
    m.base = 0x7ff000000000ULL + below(rng, 15) * 0x10000;
    if (!coin(rng, 0.1)) m.mapped_path = "\\Windows\\System32\\lib" + std::to_string(below(rng, 3)) + ".dll";
    m.in_load = coin(rng, 0.8);
    m.in_init = coin(rng, 0.8);
    m.in_mem = coin(rng, 0.8);
    return m;
}

RegistryEntry random_registry(std::mt19937_64& rng) {
    RegistryEntry e;
    e.hive = coin(rng, 0.5) ? "\\REGISTRY\\MACHINE\\SOFTWARE" : "\\REGISTRY\\USER\\S-1-5-21";
    e.key_path = "Microsoft\\Windows\\CurrentVersion\\Run" + std::to_string(below(rng, 3));
    e.value_name = "v" + std::to_string(below(rng, 40));
    e.value_data = "data" + std::to_string(below(rng, 3));
    if (coin(rng, 0.7)) e.last_write = minute(below(rng, 3));
    return e;
}

template <class T, class Make, class Key>
std::vector<T> unique_rows(std::mt19937_64& rng, std::size_t n, Make make, Key key) {
    std::vector<T> out;
    std::set<std::string> seen;
    for (std::size_t tries = 0; out.size() < n && tries < 4 * n; ++tries) {
        T row = make(rng);
        if (seen.insert(key(row).key).second) out.push_back(std::move(row));
    }
    return out;
}

/// Random nesting of a flat list; each node's PPID follows its tree parent.
ProcessForest nest(std::mt19937_64& rng, std::vector<ProcessNode> flat) {
    std::vector<int> parent(flat.size(), -1);
    for (std::size_t i = 1; i < flat.size(); ++i)
        if (coin(rng, 0.6)) parent[i] = static_cast<int>(below(rng, i));
    for (std::size_t i = flat.size(); i-- > 0;) {
        flat[i].ppid = parent[i] < 0 ? 4 : flat[static_cast<std::size_t>(parent[i])].pid;
        if (parent[i] >= 0) {
            auto& kids = flat[static_cast<std::size_t>(parent[i])].children;
            kids.insert(kids.begin(), std::move(flat[i]));
        }
    }
    ProcessForest roots;
    for (std::size_t i = 0; i < flat.size(); ++i)
        if (parent[i] < 0) roots.push_back(std::move(flat[i]));
    return roots;
}

void collect(const ProcessForest& forest, std::vector<ProcessNode>& out) {
    for (const auto& n : forest) {
        ProcessNode copy = n;
        copy.children.clear();
        out.push_back(std::move(copy));
        collect(n.children, out);
    }
}

template <class T, class Make, class Mutate, class Key>
std::vector<T> churn(std::mt19937_64& rng, const std::vector<T>& base, Make make, Mutate mutate, Key key) {
    std::vector<T> out;
    std::set<std::string> seen;
    for (const auto& row : base) {
        if (coin(rng, 0.2)) continue;
        T copy = row;
        if (coin(rng, 0.3)) mutate(rng, copy);
        seen.insert(key(copy).key);
        out.push_back(std::move(copy));
    }
    std::size_t extra = below(rng, base.size() / 4 + 2);
    for (std::size_t i = 0; i < extra && out.size() < 200; ++i) {
        T row = make(rng);
        if (seen.insert(key(row).key).second) out.push_back(std::move(row));
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

}  // namespace

Snapshot random_snapshot(std::mt19937_64& rng, std::size_t max_per_class, const std::string& label) {
    Snapshot s;
    s.label = label;
    auto count = [&] { return below(rng, max_per_class + 1); };
    s.processes = nest(rng, unique_rows<ProcessNode>(rng, count(), random_process, process_key));
    s.connections = unique_rows<Connection>(rng, count(), random_connection, connection_key);
    s.users = unique_rows<UserRecord>(rng, count(), random_user, user_key);
    s.modules = unique_rows<ModuleRecord>(rng, count(), random_module, module_key);
    s.registry = unique_rows<RegistryEntry>(rng, count(), random_registry, registry_key);
    return s;
}

Snapshot perturb(std::mt19937_64& rng, const Snapshot& base, const std::string& label) {
    Snapshot s;
    s.label = label;
    std::vector<ProcessNode> flat;
    collect(base.processes, flat);
    s.processes = nest(rng, churn(rng, flat, random_process,
                                  [](std::mt19937_64& r, ProcessNode& n) {
                                      switch (below(r, 4)) {
                                          case 0: n.threads += 1; break;
                                          case 1: n.handles = n.handles ? std::nullopt : std::optional<std::int64_t>(7); break;
                                          case 2: n.exit_time = minute(99); break;
                                          default: n.session_id = n.session_id.value_or(0) + 1;
                                      }
                                      n.offset_v += 8;  // not compared
                                  },
                                  process_key));
    s.connections = churn(rng, base.connections, random_connection,
                          [](std::mt19937_64& r, Connection& c) {
                              if (c.state && coin(r, 0.5))
                                  c.state = *c.state == "ESTABLISHED" ? "CLOSE_WAIT" : "ESTABLISHED";
                              else
                                  c.created = minute(50 + below(r, 3));
                              c.offset += 1;
                          },
                          connection_key);
    s.users = churn(rng, base.users, random_user,
                    [](std::mt19937_64& r, UserRecord& u) {
                        if (coin(r, 0.5))
                            u.nthash = u.nthash == "ffffffffffffffffffffffffffffffff" ? "eeeeeeeeeeeeeeeeeeeeeeeeeeeeeeee"
                                                                                      : "ffffffffffffffffffffffffffffffff";
                        else
                            u.user += "x";
                    },
                    user_key);
    s.modules = churn(rng, base.modules, random_module,
                      [](std::mt19937_64& r, ModuleRecord& m) {
                          switch (below(r, 3)) {
                              case 0: m.in_load = !m.in_load; break;
                              case 1: m.in_init = !m.in_init; break;
                              default: m.in_mem = !m.in_mem;
                          }
                          m.process = "renamed.exe";  // not compared
                      },
                      module_key);
    s.registry = churn(rng, base.registry, random_registry,
                       [](std::mt19937_64& r, RegistryEntry& e) {
                           if (coin(r, 0.5))
                               e.value_data += "!";
                           else
                               e.last_write = e.last_write ? std::nullopt : std::optional<Timestamp>(minute(77));
                       },
                       registry_key);
    return s;
}

double median_of(std::vector<std::size_t> values) {
    if (values.empty()) return 0;
    std::sort(values.begin(), values.end());
    std::size_t n = values.size();
    if (n % 2) return static_cast<double>(values[n / 2]);
    return (static_cast<double>(values[n / 2 - 1]) + static_cast<double>(values[n / 2])) / 2.0;
}

// -- SVG -------------------------------------------------------------------

namespace {

namespace pt = boost::property_tree;

void walk_xml(const std::string& tag, const pt::ptree& node, std::vector<std::string>& path,
              std::vector<SvgElement>& out) {
    SvgElement el;
    el.tag = tag;
    el.path = path;
    el.text = node.data();
    if (auto attrs = node.get_child_optional("<xmlattr>"))
        for (const auto& [name, value] : *attrs) el.attrs[name] = value.data();
    out.push_back(std::move(el));
    path.push_back(tag);
    for (const auto& [child_tag, child] : node) {
        if (child_tag == "<xmlattr>" || child_tag == "<xmlcomment>") continue;
        walk_xml(child_tag, child, path, out);
    }
    path.pop_back();
}

}  // namespace

std::vector<SvgElement> parse_svg(const std::string& svg) {
    std::istringstream in(svg);
    pt::ptree tree;
    pt::read_xml(in, tree);
    if (tree.size() != 1) throw std::runtime_error("expected exactly one root element");
    std::vector<SvgElement> out;
    std::vector<std::string> path;
    const auto& [tag, root] = *tree.begin();
    walk_xml(tag, root, path, out);
    return out;
}

std::vector<SvgElement> with_class(const std::vector<SvgElement>& elements, const std::string& cls) {
    std::vector<SvgElement> out;
    for (const auto& el : elements) {
        auto it = el.attrs.find("class");
        if (it == el.attrs.end()) continue;
        std::istringstream words(it->second);
        std::string w;
        while (words >> w)
            if (w == cls) {
                out.push_back(el);
                break;
            }
    }
    return out;
}

bool self_contained(const std::vector<SvgElement>& elements) {
    for (const auto& el : elements) {
        if (el.tag == "image" || el.tag == "script" || el.tag == "foreignObject" || el.tag == "use") return false;
        for (const auto& [name, value] : el.attrs) {
            if ((name == "href" || name == "xlink:href") && (value.empty() || value[0] != '#')) return false;
            auto url = value.find("url(");
            if (url != std::string::npos && value.compare(url + 4, 1, "#") != 0) return false;
        }
    }
    return true;
}

// -- files -----------------------------------------------------------------

fs::path fixture_dir() { return fs::path(SPECTRE_FIXTURE_DIR); }

fs::path scratch_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("spectre-test-" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::map<std::string, std::string> tree_digest(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            out[fs::relative(entry.path(), dir).generic_string()] = sha256_hex(read_file(entry.path()));
    return out;
}

}  // namespace oracle
