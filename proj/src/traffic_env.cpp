#include "ccoma/envs/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ccoma::traffic {

namespace {

constexpr char kRouteHeader[] = "# ccoma-routes v1";

struct Lane {
    int fixed;      // the row (horizontal) or column (vertical) index
    bool horizontal;
    int dr, dc;     // flow direction
};

// Hard mode: two two-way horizontal roads crossing two two-way vertical
// roads. Lane pairs sit at indices {4,5} and {12,13} on the 18x18 grid.
const std::vector<Lane>& hard_lanes() {
    static const std::vector<Lane> lanes = {
        {4, true, 0, -1}, {5, true, 0, 1}, {12, true, 0, -1}, {13, true, 0, 1},
        {4, false, 1, 0}, {5, false, -1, 0}, {12, false, 1, 0}, {13, false, -1, 0},
    };
    return lanes;
}

bool on_lane(const Lane& l, int r, int c) { return l.horizontal ? r == l.fixed : c == l.fixed; }

int lane_count_at(int r, int c) {
    int n = 0;
    for (const auto& l : hard_lanes())
        if (on_lane(l, r, c)) ++n;
    return n;
}

bool hard_is_road(int r, int c) { return lane_count_at(r, c) > 0; }
bool hard_is_junction(int r, int c) { return lane_count_at(r, c) > 1; }

// flow direction of the unique lane through a non-junction road cell
std::pair<int, int> hard_flow(int r, int c) {
    for (const auto& l : hard_lanes())
        if (on_lane(l, r, c)) return {l.dr, l.dc};
    throw std::logic_error("hard_flow: not a road cell");
}

// A car may move onto v when v is a junction cell or the move follows v's flow.
std::vector<int> hard_route(int rows, int cols, int from, int to) {
    const auto cell = [cols](int r, int c) { return r * cols + c; };
    static const int kD[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
    std::vector<int> parent(static_cast<std::size_t>(rows) * cols, -2);
    std::deque<int> queue;
    parent[static_cast<std::size_t>(from)] = -1;
    queue.push_back(from);
    while (!queue.empty()) {
        const int u = queue.front();
        queue.pop_front();
        if (u == to) break;
        const int ur = u / cols, uc = u % cols;
        for (const auto& d : kD) {
            const int vr = ur + d[0], vc = uc + d[1];
            if (vr < 0 || vr >= rows || vc < 0 || vc >= cols) continue;
            if (!hard_is_road(vr, vc)) continue;
            if (!hard_is_junction(vr, vc)) {
                const auto [fr, fc] = hard_flow(vr, vc);
                if (fr != d[0] || fc != d[1]) continue;
            }
            const int v = cell(vr, vc);
            if (parent[static_cast<std::size_t>(v)] != -2) continue;
            parent[static_cast<std::size_t>(v)] = u;
            queue.push_back(v);
        }
    }
    if (parent[static_cast<std::size_t>(to)] == -2)
        throw std::logic_error("hard_route: exit unreachable");
    std::vector<int> path;
    for (int v = to; v != -1; v = parent[static_cast<std::size_t>(v)]) path.push_back(v);
    std::reverse(path.begin(), path.end());
    return path;
}

}  // namespace

Config Config::for_mode(Mode m) {
    Config c;
    c.mode = m;
    switch (m) {
        case Mode::Easy:
            c.rows = c.cols = 7;
            c.n_max = 5;
            c.p_arrive = 0.30;
            break;
        case Mode::Hard:
            c.rows = c.cols = 18;
            c.n_max = 20;
            c.p_arrive = 0.05;
            break;
        case Mode::Harder:
            c.rows = c.cols = 18;
            c.n_max = 20;
            c.p_arrive = 0.10;
            break;
    }
    return c;
}

Mode mode_from_string(const std::string& s) {
    if (s == "easy") return Mode::Easy;
    if (s == "hard") return Mode::Hard;
    if (s == "harder") return Mode::Harder;
    throw std::invalid_argument("unknown traffic mode '" + s + "'");
}

std::string mode_to_string(Mode m) {
    switch (m) {
        case Mode::Easy: return "easy";
        case Mode::Hard: return "hard";
        case Mode::Harder: return "harder";
    }
    return "?";
}

void RouteTable::index_arrivals() {
    arrival_cells.clear();
    routes_by_arrival.clear();
    std::map<int, int> seen;  // arrival cell -> index
    for (std::size_t ri = 0; ri < routes.size(); ++ri) {
        const int head = routes[ri][0];
        auto it = seen.find(head);
        if (it == seen.end()) {
            it = seen.emplace(head, static_cast<int>(arrival_cells.size())).first;
            arrival_cells.push_back(head);
            routes_by_arrival.emplace_back();
        }
        routes_by_arrival[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(ri));
    }
}

void RouteTable::validate() const {
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("route table: bad grid size");
    if (routes.empty()) throw std::invalid_argument("route table: no routes");
    for (const auto& r : routes) {
        if (r.size() < 2) throw std::invalid_argument("route table: route shorter than 2 cells");
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (r[i] < 0 || r[i] >= rows * cols)
                throw std::invalid_argument("route table: cell " + std::to_string(r[i]) +
                                            " outside the " + std::to_string(rows) + "x" +
                                            std::to_string(cols) + " grid");
            if (i > 0) {
                const int dr = std::abs(r[i] / cols - r[i - 1] / cols);
                const int dc = std::abs(r[i] % cols - r[i - 1] % cols);
                if (dr + dc != 1)
                    throw std::invalid_argument("route table: cells " + std::to_string(r[i - 1]) +
                                                " and " + std::to_string(r[i]) +
                                                " are not adjacent");
            }
        }
    }
}

RouteTable builtin_routes(Mode m) {
    RouteTable t;
    if (m == Mode::Easy) {
        // one junction of two crossing one-way roads, straight-through routes
        t.rows = t.cols = 7;
        std::vector<int> east, south;
        for (int c = 0; c < 7; ++c) east.push_back(3 * 7 + c);
        for (int r = 0; r < 7; ++r) south.push_back(r * 7 + 3);
        t.routes = {east, south};
    } else {
        t.rows = t.cols = 18;
        const int cols = 18;
        struct Port { int cell, partner; };
        // arrival cell and the same-edge opposite-lane exit (the u-turn, excluded)
        const std::vector<Port> arrivals = {
            {5 * cols + 0, 4 * cols + 0},     {13 * cols + 0, 12 * cols + 0},
            {4 * cols + 17, 5 * cols + 17},   {12 * cols + 17, 13 * cols + 17},
            {0 * cols + 4, 0 * cols + 5},     {0 * cols + 12, 0 * cols + 13},
            {17 * cols + 5, 17 * cols + 4},   {17 * cols + 13, 17 * cols + 12},
        };
        const std::vector<int> exits = {
            5 * cols + 17, 13 * cols + 17, 4 * cols + 0, 12 * cols + 0,
            17 * cols + 4, 17 * cols + 12, 0 * cols + 5, 0 * cols + 13,
        };
        for (const auto& a : arrivals)
            for (int e : exits)
                if (e != a.partner) t.routes.push_back(hard_route(18, 18, a.cell, e));
    }
    t.index_arrivals();
    t.validate();
    return t;
}

RouteTable load_route_table(const std::string& path, int rows, int cols) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("route table: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line) || line.rfind(kRouteHeader, 0) != 0)
        throw std::runtime_error("route table: '" + path + "' does not start with '" +
                                 kRouteHeader + "'");
    RouteTable t;
    t.rows = rows;
    t.cols = cols;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<int> route;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) route.push_back(std::stoi(tok));
        t.routes.push_back(std::move(route));
    }
    t.index_arrivals();
    t.validate();
    return t;
}

void save_route_table(const std::string& path, const RouteTable& table, const std::string& note) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("route table: cannot open '" + path + "' for writing");
    f << kRouteHeader << " " << note << "\n";
    for (const auto& r : table.routes) {
        for (std::size_t i = 0; i < r.size(); ++i) f << (i ? "," : "") << r[i];
        f << "\n";
    }
}

std::vector<int> junction_cells(Mode m) {
    std::vector<int> out;
    if (m == Mode::Easy) {
        out.push_back(3 * 7 + 3);
    } else {
        for (int r = 0; r < 18; ++r)
            for (int c = 0; c < 18; ++c)
                if (hard_is_junction(r, c)) out.push_back(r * 18 + c);
    }
    return out;
}

TrafficEnv::TrafficEnv(Config cfg) : cfg_(cfg) {
    if (cfg_.n_max <= 0 || cfg_.p_arrive <= 0.0 || cfg_.p_arrive > 1.0)
        throw std::invalid_argument("TrafficEnv: need n_max > 0 and 0 < p_arrive <= 1");
    if (cfg_.r_coll >= 0.0 || cfg_.r_time >= 0.0)
        throw std::invalid_argument("TrafficEnv: r_coll and r_time must be negative");
    table_ = cfg_.route_file.empty() ? builtin_routes(cfg_.mode)
                                     : load_route_table(cfg_.route_file, cfg_.rows, cfg_.cols);
    if (table_.rows != cfg_.rows || table_.cols != cfg_.cols)
        throw std::invalid_argument("TrafficEnv: route table grid does not match config");
    slots_.assign(static_cast<std::size_t>(cfg_.n_max), std::nullopt);
}

int TrafficEnv::count_active() const {
    int n = 0;
    for (const auto& s : slots_)
        if (s) ++n;
    return n;
}

int TrafficEnv::position_of(int slot) const {
    const auto& car = slots_[static_cast<std::size_t>(slot)];
    if (!car) return -1;
    return table_.routes[static_cast<std::size_t>(car->route)][static_cast<std::size_t>(car->cursor)];
}

EnvStep TrafficEnv::reset(std::uint64_t seed) {
    slots_.assign(static_cast<std::size_t>(cfg_.n_max), std::nullopt);
    rng_.seed(seed);
    t_ = 0;
    any_collision_ = false;
    last_collisions_ = 0;
    return snapshot(0.0, false, nullptr);
}

EnvStep TrafficEnv::step(const std::vector<int>& actions) {
    if (t_ >= cfg_.horizon) throw std::logic_error("TrafficEnv::step: episode already finished");
    if (actions.size() != static_cast<std::size_t>(cfg_.n_max))
        throw std::invalid_argument("TrafficEnv::step: expected " + std::to_string(cfg_.n_max) +
                                    " actions, got " + std::to_string(actions.size()));
    for (int s = 0; s < cfg_.n_max; ++s) {
        const bool active = slots_[static_cast<std::size_t>(s)].has_value();
        const int a = actions[static_cast<std::size_t>(s)];
        if (active && a != kGas && a != kBrake)
            throw std::invalid_argument("TrafficEnv::step: slot " + std::to_string(s) +
                                        " needs gas|brake, got " + std::to_string(a));
        if (!active && a != -1)
            throw std::invalid_argument("TrafficEnv::step: action " + std::to_string(a) +
                                        " supplied for inactive slot " + std::to_string(s));
    }

    for (auto& car : slots_)
        if (car) ++car->tau;

    // simultaneous movement; a car reaching its route's final cell leaves the grid
    for (int s = 0; s < cfg_.n_max; ++s) {
        auto& car = slots_[static_cast<std::size_t>(s)];
        if (!car || actions[static_cast<std::size_t>(s)] != kGas) continue;
        const auto& route = table_.routes[static_cast<std::size_t>(car->route)];
        if (car->cursor + 1 == static_cast<int>(route.size()) - 1)
            car.reset();
        else
            ++car->cursor;
    }

    // arrivals: one Bernoulli draw per arrival point; blocked or over-capacity
    // spawns are dropped
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t ai = 0; ai < table_.arrival_cells.size(); ++ai) {
        if (unit(rng_) >= cfg_.p_arrive) continue;
        if (count_active() >= cfg_.n_max) continue;
        const int cell = table_.arrival_cells[ai];
        bool occupied = false;
        for (int s = 0; s < cfg_.n_max && !occupied; ++s)
            occupied = slots_[static_cast<std::size_t>(s)] && position_of(s) == cell;
        if (occupied) continue;
        int slot = 0;
        while (slots_[static_cast<std::size_t>(slot)]) ++slot;
        const auto& choices = table_.routes_by_arrival[ai];
        std::uniform_int_distribution<int> pick(0, static_cast<int>(choices.size()) - 1);
        slots_[static_cast<std::size_t>(slot)] =
            Car{slot + 1, choices[static_cast<std::size_t>(pick(rng_))], 0, 0};
    }

    // collision accounting: every car sharing a cell with another counts
    std::map<int, int> occupancy;
    for (int s = 0; s < cfg_.n_max; ++s)
        if (slots_[static_cast<std::size_t>(s)]) ++occupancy[position_of(s)];
    int collisions = 0;
    double tau_penalty = 0.0;
    for (int s = 0; s < cfg_.n_max; ++s) {
        const auto& car = slots_[static_cast<std::size_t>(s)];
        if (!car) continue;
        if (occupancy[position_of(s)] >= 2) ++collisions;
        tau_penalty += car->tau * cfg_.r_time;
    }
    last_collisions_ = collisions;
    any_collision_ = any_collision_ || collisions > 0;

    const double reward = collisions * cfg_.r_coll + tau_penalty;
    ++t_;
    return snapshot(reward, t_ >= cfg_.horizon, &actions);
}

EnvStep TrafficEnv::snapshot(double reward, bool done, const std::vector<int>* actions) {
    EnvStep out;
    out.obs.assign(static_cast<std::size_t>(cfg_.n_max) * obs_dim(), 0.0);
    for (int s = 0; s < cfg_.n_max; ++s) {
        if (!slots_[static_cast<std::size_t>(s)]) continue;
        const auto row = observe(s);
        std::copy(row.begin(), row.end(), out.obs.begin() + static_cast<std::size_t>(s) * obs_dim());
    }
    out.adj = build_adjacency();
    out.active.resize(static_cast<std::size_t>(cfg_.n_max));
    for (int s = 0; s < cfg_.n_max; ++s)
        out.active[static_cast<std::size_t>(s)] = slots_[static_cast<std::size_t>(s)] ? 1 : 0;
    out.avail.assign(static_cast<std::size_t>(cfg_.n_max) * n_actions(), 1.0);
    out.reward = reward;
    out.done = done;
    if (actions != nullptr) {
        nlohmann::json cars_j = nlohmann::json::array();
        for (int s = 0; s < cfg_.n_max; ++s) {
            const auto& car = slots_[static_cast<std::size_t>(s)];
            if (!car) continue;
            cars_j.push_back({{"id", car->id},
                              {"pos", position_of(s)},
                              {"route", car->route},
                              {"tau", car->tau}});
        }
        out.trace = {{"step", t_ - 1},
                     {"cars", cars_j},
                     {"actions", *actions},
                     {"reward", reward},
                     {"collisions", last_collisions_}};
    }
    return out;
}

std::vector<double> TrafficEnv::observe(int slot) const {
    std::vector<double> out(static_cast<std::size_t>(obs_dim()), 0.0);
    const auto& car = slots_[static_cast<std::size_t>(slot)];
    if (!car) return out;
    const int pos = position_of(slot);
    const int r0 = pos / cfg_.cols, c0 = pos % cfg_.cols;
    const double cell_norm = static_cast<double>(cfg_.rows) * cfg_.cols;
    const double route_norm = static_cast<double>(table_.routes.size());
    int k = 0;
    for (int dr = -cfg_.vision; dr <= cfg_.vision; ++dr) {
        for (int dc = -cfg_.vision; dc <= cfg_.vision; ++dc, ++k) {
            const int r = r0 + dr, c = c0 + dc;
            if (r < 0 || r >= cfg_.rows || c < 0 || c >= cfg_.cols) continue;
            const int cell = r * cfg_.cols + c;
            const Car* occupant = nullptr;
            if (dr == 0 && dc == 0) {
                occupant = &*car;  // the center cell reports the observer itself
            } else {
                for (int s = 0; s < cfg_.n_max; ++s) {
                    const auto& other = slots_[static_cast<std::size_t>(s)];
                    if (other && position_of(s) == cell) {
                        occupant = &*other;
                        break;  // slots scanned in id order, lowest id wins
                    }
                }
            }
            if (occupant == nullptr) continue;
            out[static_cast<std::size_t>(k) * 3 + 0] = occupant->id / static_cast<double>(cfg_.n_max);
            out[static_cast<std::size_t>(k) * 3 + 1] = cell / cell_norm;
            out[static_cast<std::size_t>(k) * 3 + 2] = (occupant->route + 1) / route_norm;
        }
    }
    return out;
}

AdjacencyMask TrafficEnv::build_adjacency() const {
    AdjacencyMask adj = AdjacencyMask::identity(cfg_.n_max);
    adj.timestep = t_;
    for (int i = 0; i < cfg_.n_max; ++i) {
        if (!slots_[static_cast<std::size_t>(i)]) continue;
        const int pi = position_of(i);
        for (int j = i + 1; j < cfg_.n_max; ++j) {
            if (!slots_[static_cast<std::size_t>(j)]) continue;
            const int pj = position_of(j);
            const int dr = std::abs(pi / cfg_.cols - pj / cfg_.cols);
            const int dc = std::abs(pi % cfg_.cols - pj % cfg_.cols);
            if (dr <= cfg_.vision && dc <= cfg_.vision) {
                adj.at(i, j) = 1.0;
                adj.at(j, i) = 1.0;
            }
        }
    }
    return adj;
}

std::vector<double> TrafficEnv::true_state() const {
    std::vector<double> s(static_cast<std::size_t>(cfg_.n_max), 0.0);
    for (int i = 0; i < cfg_.n_max; ++i)
        if (slots_[static_cast<std::size_t>(i)]) s[static_cast<std::size_t>(i)] = 1.0;
    return s;
}

std::optional<bool> TrafficEnv::episode_success() const {
    if (t_ < cfg_.horizon) return std::nullopt;
    return !any_collision_;
}

std::string TrafficEnv::save_state() const {
    std::ostringstream ss;
    ss << "tj v1\n";
    ss << "t " << t_ << "\n";
    ss << "coll " << (any_collision_ ? 1 : 0) << " " << last_collisions_ << "\n";
    ss << "cars " << count_active() << "\n";
    for (int s = 0; s < cfg_.n_max; ++s) {
        const auto& car = slots_[static_cast<std::size_t>(s)];
        if (car) ss << s << " " << car->route << " " << car->cursor << " " << car->tau << "\n";
    }
    ss << "rng " << engine_state(rng_) << "\n";
    return ss.str();
}

void TrafficEnv::load_state(const std::string& blob) {
    std::istringstream ss(blob);
    std::string word, v;
    ss >> word >> v;
    if (word != "tj" || v != "v1") throw std::runtime_error("TrafficEnv: unrecognized state blob");
    int coll_flag = 0, n_cars = 0;
    ss >> word >> t_;
    ss >> word >> coll_flag >> last_collisions_;
    ss >> word >> n_cars;
    any_collision_ = coll_flag != 0;
    slots_.assign(static_cast<std::size_t>(cfg_.n_max), std::nullopt);
    for (int i = 0; i < n_cars; ++i) {
        int slot, route, cursor, tau;
        ss >> slot >> route >> cursor >> tau;
        slots_[static_cast<std::size_t>(slot)] = Car{slot + 1, route, cursor, tau};
    }
    ss >> word;
    if (word != "rng") throw std::runtime_error("TrafficEnv: malformed state blob");
    ss >> rng_;
    if (ss.fail()) throw std::runtime_error("TrafficEnv: malformed state blob");
}

}  // namespace ccoma::traffic
