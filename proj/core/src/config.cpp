#include "rgelan/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "rgelan/errors.hpp"

namespace rgelan {

const std::vector<std::string>& module_registry() {
    static const std::vector<std::string> names = {
        "ADown", "Concat", "Conv", "DDetect", "RCS", "RepNCSPELAN4", "RepVGG",
        "SPPELAN", "Upsample",
    };
    return names;
}

bool known_module(const std::string& name) {
    const auto& reg = module_registry();
    return std::find(reg.begin(), reg.end(), name) != reg.end();
}

namespace {

// One parsed bracket-list item: int, identifier, or nested list.
struct Item;
using ItemList = std::vector<Item>;
struct Item {
    std::variant<int, std::string, ItemList> v;
};

struct Cursor {
    const std::string& s;
    std::size_t i = 0;
    int line;

    void skip_ws() {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t'))
            ++i;
    }
    bool done() {
        skip_ws();
        return i >= s.size();
    }
    char peek() {
        skip_ws();
        return i < s.size() ? s[i] : '\0';
    }
    [[noreturn]] void fail(const std::string& what) { throw ParseError(line, what); }
};

Item parse_item(Cursor& c);

ItemList parse_list(Cursor& c) {
    if (c.peek() != '[')
        c.fail("expected '['");
    ++c.i;
    ItemList items;
    if (c.peek() == ']') {
        ++c.i;
        return items;
    }
    while (true) {
        items.push_back(parse_item(c));
        char ch = c.peek();
        if (ch == ',') {
            ++c.i;
            continue;
        }
        if (ch == ']') {
            ++c.i;
            return items;
        }
        c.fail("expected ',' or ']'");
    }
}

Item parse_item(Cursor& c) {
    char ch = c.peek();
    if (ch == '[')
        return Item{parse_list(c)};
    if (ch == '-' || std::isdigit(static_cast<unsigned char>(ch))) {
        std::size_t start = c.i;
        if (ch == '-')
            ++c.i;
        if (c.i >= c.s.size() || !std::isdigit(static_cast<unsigned char>(c.s[c.i])))
            c.fail("expected digits after '-'");
        while (c.i < c.s.size() && std::isdigit(static_cast<unsigned char>(c.s[c.i])))
            ++c.i;
        if (c.i < c.s.size() && (c.s[c.i] == '.' || c.s[c.i] == 'e' || c.s[c.i] == 'E'))
            c.fail("only integer arguments are supported");
        return Item{std::stoi(c.s.substr(start, c.i - start))};
    }
    if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
        std::size_t start = c.i;
        while (c.i < c.s.size() &&
               (std::isalnum(static_cast<unsigned char>(c.s[c.i])) || c.s[c.i] == '_'))
            ++c.i;
        return Item{c.s.substr(start, c.i - start)};
    }
    c.fail(std::string("unexpected character '") + ch + "'");
}

std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
        return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int parse_header_int(const std::string& value, int line, const std::string& key) {
    std::string v = strip(value);
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) {
            return std::isdigit(c);
        }))
        throw ParseError(line, key + " wants a non-negative integer, got '" + v + "'");
    return std::stoi(v);
}

LayerSpec item_to_layer(const ItemList& items, int line) {
    if (items.size() != 4)
        throw ParseError(line, "layer wants [from, repeats, Module, [args]], got " +
                                   std::to_string(items.size()) + " fields");
    LayerSpec spec;
    spec.line = line;
    if (const int* f = std::get_if<int>(&items[0].v)) {
        spec.from.push_back(*f);
    } else if (const ItemList* fl = std::get_if<ItemList>(&items[0].v)) {
        for (const Item& it : *fl) {
            const int* f2 = std::get_if<int>(&it.v);
            if (!f2)
                throw ParseError(line, "from list entries must be integers");
            spec.from.push_back(*f2);
        }
        if (spec.from.empty())
            throw ParseError(line, "from list must not be empty");
    } else {
        throw ParseError(line, "from must be an integer or an integer list");
    }
    const int* rep = std::get_if<int>(&items[1].v);
    if (!rep || *rep < 1)
        throw ParseError(line, "repeats must be a positive integer");
    spec.repeats = *rep;
    const std::string* mod = std::get_if<std::string>(&items[2].v);
    if (!mod)
        throw ParseError(line, "module name must be an identifier");
    if (!known_module(*mod))
        throw ParseError(line, "unknown module '" + *mod + "'");
    spec.module = *mod;
    const ItemList* args = std::get_if<ItemList>(&items[3].v);
    if (!args)
        throw ParseError(line, "module arguments must be a bracketed list");
    for (const Item& it : *args) {
        if (const int* a = std::get_if<int>(&it.v))
            spec.args.push_back(*a);
        else if (const std::string* s = std::get_if<std::string>(&it.v))
            spec.args.push_back(*s);
        else
            throw ParseError(line, "module arguments must be scalars");
    }
    return spec;
}

} // namespace

ModelConfig parse_config(const std::string& text) {
    ModelConfig cfg;
    bool saw_ch = false, saw_nc = false, in_layers = false;

    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::size_t hash = raw.find('#');
        if (hash != std::string::npos)
            raw.resize(hash);
        std::string s = strip(raw);
        if (s.empty())
            continue;

        if (!in_layers) {
            std::size_t colon = s.find(':');
            if (colon == std::string::npos)
                throw ParseError(line, "expected 'key: value' before the layers section");
            std::string key = strip(s.substr(0, colon));
            std::string value = s.substr(colon + 1);
            if (key == "ch") {
                cfg.ch = parse_header_int(value, line, "ch");
                saw_ch = true;
            } else if (key == "nc") {
                cfg.nc = parse_header_int(value, line, "nc");
                saw_nc = true;
            } else if (key == "layers") {
                if (!strip(value).empty())
                    throw ParseError(line, "'layers:' takes no inline value");
                in_layers = true;
            } else {
                throw ParseError(line, "unknown key '" + key + "'");
            }
            continue;
        }

        if (s.size() < 2 || s[0] != '-' || (s[1] != ' ' && s[1] != '\t' && s[1] != '['))
            throw ParseError(line, "layer entries start with '- ['");
        Cursor c{s, 1, line};
        ItemList items = parse_list(c);
        if (!c.done())
            c.fail("trailing characters after layer entry");
        cfg.layers.push_back(item_to_layer(items, line));
    }

    if (!saw_ch)
        throw ParseError(line, "missing 'ch:' header");
    if (!saw_nc)
        throw ParseError(line, "missing 'nc:' header");
    if (cfg.ch < 1)
        throw ParseError(line, "ch must be at least 1");
    if (cfg.nc < 1)
        throw ParseError(line, "nc must be at least 1");
    if (!in_layers || cfg.layers.empty())
        throw ParseError(line, "config needs a non-empty layers section");
    return cfg;
}

ModelConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw FormatError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str());
}

} // namespace rgelan
