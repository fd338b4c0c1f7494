#include "fringe/mpec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <tuple>

#include "fringe/lcp.hpp"

namespace fringe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Original-variable layout of one leader problem.

struct VarTable {
  int T = 0, P = 0, K = 0, NF = 0;
  int lg0 = 0, li0 = 0, fg0 = 0, fv0 = 0, fl0 = 0, total = 0;

  static VarTable make(const MpecIndex& idx) {
    VarTable v;
    v.T = idx.techs;
    v.P = idx.periods;
    v.K = idx.nk();
    v.NF = idx.nf();
    v.lg0 = 0;
    v.li0 = v.lg0 + v.T * v.P;
    v.fg0 = v.li0 + v.K;
    v.fv0 = v.fg0 + v.NF * v.T * v.P;
    v.fl0 = v.fv0 + v.NF * v.K;
    v.total = v.fl0 + v.NF * v.T * v.P;
    return v;
  }
  int lg(int t, int p) const { return lg0 + t * P + p; }
  int li(int k) const { return li0 + k; }
  int fg(int fi, int t, int p) const { return fg0 + (fi * T + t) * P + p; }
  int fv(int fi, int k) const { return fv0 + fi * K + k; }
  int fl(int fi, int t, int p) const { return fl0 + (fi * T + t) * P + p; }
};

// Tri-state branching state; -1 marks an unfixed pair.
struct PatternState {
  std::vector<std::int8_t> r1, r2, r3;

  static PatternState unfixed(const MpecIndex& idx) {
    PatternState s;
    s.r1.assign(idx.r1_count(), -1);
    s.r2.assign(idx.r2_count(), -1);
    s.r3.assign(idx.r3_count(), -1);
    return s;
  }
  static PatternState from_pattern(const ComplementarityPattern& p) {
    PatternState s;
    s.r1.assign(p.r1.begin(), p.r1.end());
    s.r2.assign(p.r2.begin(), p.r2.end());
    s.r3.assign(p.r3.begin(), p.r3.end());
    return s;
  }
  bool full() const {
    auto ok = [](const std::vector<std::int8_t>& v) {
      return std::all_of(v.begin(), v.end(), [](std::int8_t b) { return b >= 0; });
    };
    return ok(r1) && ok(r2) && ok(r3);
  }
  ComplementarityPattern to_pattern() const {
    ComplementarityPattern p;
    p.r1.assign(r1.begin(), r1.end());
    p.r2.assign(r2.begin(), r2.end());
    p.r3.assign(r3.begin(), r3.end());
    return p;
  }
};

// Affine elimination of pinned and substituted variables. Every original
// variable resolves to a constant or to c0 + coeff * reduced_var.
struct Reduction {
  struct Expr {
    double c0 = 0.0;
    int vi = -1;  // reduced index; -1 means constant
    double coeff = 0.0;
  };
  enum class Kind : std::int8_t { Free, Const, Alias };

  std::vector<Kind> kind;
  std::vector<double> value;      // for Const
  std::vector<int> alias_target;  // for Alias (an fv variable id)
  std::vector<double> alias_c0;
  std::vector<double> lb, ub;     // boxes on original variables
  std::vector<Expr> expr;
  std::vector<int> reduced_of;    // original id of each reduced variable
  int n_reduced = 0;
  bool infeasible = false;

  explicit Reduction(int total)
      : kind(total, Kind::Free),
        value(total, 0.0),
        alias_target(total, -1),
        alias_c0(total, 0.0),
        lb(total, 0.0),
        ub(total, kInf),
        expr(total) {}

  void pin(int v, double val) {
    if (infeasible) return;
    if (kind[v] == Kind::Const) {
      if (std::abs(value[v] - val) > 1e-9 * (1.0 + std::abs(val))) infeasible = true;
      return;
    }
    kind[v] = Kind::Const;
    value[v] = val;
  }

  void finalize() {
    const int n = static_cast<int>(kind.size());
    // Aliases first: fg = c0 + fv. If either side is pinned, propagate.
    for (int v = 0; v < n; ++v) {
      if (kind[v] != Kind::Alias) continue;
      const int tgt = alias_target[v];
      if (tgt < 0) {  // alias to a constant
        kind[v] = Kind::Const;
        value[v] = alias_c0[v];
        continue;
      }
      if (kind[v] == Kind::Alias && kind[tgt] == Kind::Const) {
        kind[v] = Kind::Const;
        value[v] = alias_c0[v] + value[tgt];
      }
    }
    // A pinned alias pins its target.
    for (int v = 0; v < n; ++v) {
      if (kind[v] != Kind::Alias) continue;
      // nothing: pins on alias sources were applied before alias creation
    }
    // Box propagation from alias sources onto targets.
    for (int v = 0; v < n; ++v) {
      if (kind[v] != Kind::Alias) continue;
      const int tgt = alias_target[v];
      lb[tgt] = std::max(lb[tgt], lb[v] - alias_c0[v]);
      ub[tgt] = std::min(ub[tgt], ub[v] - alias_c0[v]);
    }
    // Constants must respect boxes.
    for (int v = 0; v < n; ++v) {
      if (kind[v] == Kind::Const &&
          (value[v] < lb[v] - 1e-7 * (1.0 + std::abs(value[v])) ||
           value[v] > ub[v] + 1e-7 * (1.0 + std::abs(value[v])))) {
        infeasible = true;
      }
      if (kind[v] == Kind::Free && lb[v] > ub[v] + 1e-9) infeasible = true;
    }
    if (infeasible) return;

    for (int v = 0; v < n; ++v) {
      if (kind[v] == Kind::Free) {
        expr[v] = {0.0, n_reduced, 1.0};
        reduced_of.push_back(v);
        ++n_reduced;
      }
    }
    for (int v = 0; v < n; ++v) {
      switch (kind[v]) {
        case Kind::Free:
          break;
        case Kind::Const:
          expr[v] = {value[v], -1, 0.0};
          break;
        case Kind::Alias: {
          const int tgt = alias_target[v];
          if (kind[tgt] == Kind::Const) {
            expr[v] = {alias_c0[v] + value[tgt], -1, 0.0};
          } else {
            expr[v] = {alias_c0[v], expr[tgt].vi, 1.0};
          }
          break;
        }
      }
    }
  }
};

// Linear expression over original variables plus a constant.
struct LinRow {
  std::vector<std::pair<int, double>> terms;
  double constant = 0.0;

  void add(int v, double c) { terms.emplace_back(v, c); }
};

struct BuiltQp {
  bool infeasible = false;
  bool exact_objective = false;
  QpProblem qp;
  Reduction red;
  std::vector<int> phi_var;  // reduced index of the McCormick variable, per period

  BuiltQp() : red(0) {}
};

// ---------------------------------------------------------------------------

struct Builder {
  const MpecProblem& p;
  const PatternState& state;
  bool want_exact;

  const MpecIndex& idx;
  VarTable vt;
  std::vector<double> rival;  // per-period rival price-maker supply

  explicit Builder(const MpecProblem& prob, const PatternState& st, bool exact)
      : p(prob), state(st), want_exact(exact), idx(prob.index),
        vt(VarTable::make(prob.index)), rival(prob.rival_supply()) {}

  double cap_of(int firm, int t) const {
    return p.data.firms[firm].capacity(p.data.technologies[t].id);
  }

  int inv_slot(int t) const {
    for (int k = 0; k < idx.nk(); ++k) {
      if (idx.investable[k] == t) return k;
    }
    return -1;
  }

  BuiltQp build() const {
    BuiltQp out;
    out.red = Reduction(vt.total);
    Reduction& red = out.red;
    const MarketData& data = p.data;
    const double B = data.demand.slope;
    const int T = vt.T, P = vt.P, K = vt.K, NF = vt.NF;

    // Boxes.
    for (int t = 0; t < T; ++t) {
      for (int per = 0; per < P; ++per) {
        red.ub[vt.lg(t, per)] = p.big_m.gen_bound();
      }
    }
    for (int k = 0; k < K; ++k) red.ub[vt.li(k)] = p.big_m.inv_bound();
    for (int fi = 0; fi < NF; ++fi) {
      const int firm = idx.fringe_firms[fi];
      for (int t = 0; t < T; ++t) {
        const bool investable = data.technologies[t].investable;
        for (int per = 0; per < P; ++per) {
          red.ub[vt.fg(fi, t, per)] =
              std::min(p.big_m.gen_bound(),
                       cap_of(firm, t) + (investable ? p.big_m.inv_bound() : 0.0));
          red.ub[vt.fl(fi, t, per)] = p.big_m.lambda_bound(per);
        }
      }
      for (int k = 0; k < K; ++k) red.ub[vt.fv(fi, k)] = p.big_m.inv_bound();
    }

    // Pins from the fixed zero-branches.
    for (int fi = 0; fi < NF; ++fi) {
      for (int t = 0; t < T; ++t) {
        for (int per = 0; per < P; ++per) {
          if (state.r1[idx.r1(fi, t, per)] == 0) red.pin(vt.fg(fi, t, per), 0.0);
          if (state.r3[idx.r3(fi, t, per)] == 0) red.pin(vt.fl(fi, t, per), 0.0);
        }
      }
      for (int k = 0; k < K; ++k) {
        if (state.r2[idx.r2(fi, k)] == 0) red.pin(vt.fv(fi, k), 0.0);
      }
    }

    // Capacity equalities (r3 = 1) become substitutions fg = CAP + fv.
    for (int fi = 0; fi < NF; ++fi) {
      const int firm = idx.fringe_firms[fi];
      for (int t = 0; t < T; ++t) {
        const int k = inv_slot(t);
        for (int per = 0; per < P; ++per) {
          if (state.r3[idx.r3(fi, t, per)] != 1) continue;
          const int g = vt.fg(fi, t, per);
          const double cap = cap_of(firm, t);
          if (red.kind[g] == Reduction::Kind::Const) {
            // fg already pinned (r1 = 0): CAP + fv must equal the pin.
            if (k >= 0) {
              red.pin(vt.fv(fi, k), red.value[g] - cap);
            } else if (std::abs(red.value[g] - cap) > 1e-9 * (1.0 + cap)) {
              red.infeasible = true;
            }
            continue;
          }
          if (k >= 0 && red.kind[vt.fv(fi, k)] != Reduction::Kind::Const) {
            red.kind[g] = Reduction::Kind::Alias;
            red.alias_target[g] = vt.fv(fi, k);
            red.alias_c0[g] = cap;
          } else {
            const double invv = k >= 0 ? red.value[vt.fv(fi, k)] : 0.0;
            red.kind[g] = Reduction::Kind::Alias;
            red.alias_target[g] = -1;
            red.alias_c0[g] = cap + invv;
          }
        }
      }
    }

    red.finalize();
    if (red.infeasible) {
      out.infeasible = true;
      return out;
    }

    const int n_core = red.n_reduced;
    // Decide which periods need a McCormick variable (variable fringe output
    // coupled to leader output) when the exact bilinear term is not kept.
    std::vector<std::vector<std::pair<int, double>>> yvar(P);  // reduced terms
    std::vector<double> yconst(P, 0.0);
    for (int per = 0; per < P; ++per) {
      std::vector<double> coeff(n_core, 0.0);
      for (int fi = 0; fi < NF; ++fi) {
        for (int t = 0; t < T; ++t) {
          const auto& e = red.expr[vt.fg(fi, t, per)];
          yconst[per] += e.c0;
          if (e.vi >= 0) coeff[e.vi] += e.coeff;
        }
      }
      for (int v = 0; v < n_core; ++v) {
        if (coeff[v] != 0.0) yvar[per].emplace_back(v, coeff[v]);
      }
    }

    const bool exact = want_exact;
    out.exact_objective = exact;
    out.phi_var.assign(P, -1);
    int n = n_core;
    if (!exact) {
      for (int per = 0; per < P; ++per) {
        if (!yvar[per].empty()) out.phi_var[per] = n++;
      }
    }

    QpProblem qp = QpProblem::make(n);
    for (int v = 0; v < n_core; ++v) {
      qp.lower(v) = red.lb[red.reduced_of[v]];
      qp.upper(v) = red.ub[red.reduced_of[v]];
    }

    // Upper bound on the leader's per-period output (for envelope cuts).
    std::vector<double> x_ub(P, 0.0);
    for (int per = 0; per < P; ++per) {
      for (int t = 0; t < T; ++t) {
        const double cap = cap_of(p.leader, t);
        const bool investable = data.technologies[t].investable;
        x_ub[per] += std::min(p.big_m.gen_bound(),
                              cap + (investable ? p.big_m.inv_bound() : 0.0));
      }
    }

    // Objective, assembled in maximisation form and negated at the end.
    MatrixXd Hmax = MatrixXd::Zero(n, n);
    VectorXd cmax = VectorXd::Zero(n);
    for (int per = 0; per < P; ++per) {
      const double W = data.demand.weights[per];
      const double A = data.demand.intercepts[per];
      for (int t = 0; t < T; ++t) {
        const int i = red.expr[vt.lg(t, per)].vi;  // leader vars stay free
        cmax(i) += W * (A - B * rival[per] - B * yconst[per] -
                        data.technologies[t].marginal_cost);
        for (int t2 = 0; t2 < T; ++t2) {
          const int j = red.expr[vt.lg(t2, per)].vi;
          Hmax(i, j) -= 2.0 * W * B;
        }
      }
      if (exact) {
        for (const auto& [v, a] : yvar[per]) {
          for (int t = 0; t < T; ++t) {
            const int i = red.expr[vt.lg(t, per)].vi;
            Hmax(i, v) -= W * B * a;
            Hmax(v, i) -= W * B * a;
          }
        }
      } else if (out.phi_var[per] >= 0) {
        cmax(out.phi_var[per]) -= W * B;
      }
    }
    for (int k = 0; k < K; ++k) {
      const auto& e = red.expr[vt.li(k)];
      cmax(e.vi) -= *data.technologies[idx.investable[k]].invest_cost;
    }
    qp.hessian = -Hmax;
    qp.linear = -cmax;

    // Constraint assembly.
    std::vector<std::vector<std::pair<int, double>>> eq_rows, in_rows;
    std::vector<double> eq_rhs, in_rhs;
    bool row_infeasible = false;

    auto expand = [&](const LinRow& row, std::vector<std::pair<int, double>>& terms,
                      double& cst) {
      cst = row.constant;
      std::vector<double> dense(n, 0.0);
      for (const auto& [v, c] : row.terms) {
        const auto& e = red.expr[v];
        cst += c * e.c0;
        if (e.vi >= 0) dense[e.vi] += c * e.coeff;
      }
      terms.clear();
      for (int v = 0; v < n; ++v) {
        if (dense[v] != 0.0) terms.emplace_back(v, dense[v]);
      }
    };

    auto add_eq = [&](const LinRow& row) {
      std::vector<std::pair<int, double>> terms;
      double cst = 0.0;
      expand(row, terms, cst);
      if (terms.empty()) {
        if (std::abs(cst) > 1e-7) row_infeasible = true;
        return;
      }
      eq_rows.push_back(std::move(terms));
      eq_rhs.push_back(-cst);
    };
    // expr + constant >= lo
    auto add_ge = [&](const LinRow& row, double lo) {
      std::vector<std::pair<int, double>> terms;
      double cst = 0.0;
      expand(row, terms, cst);
      if (terms.empty()) {
        if (cst < lo - 1e-7 * (1.0 + std::abs(lo))) row_infeasible = true;
        return;
      }
      in_rows.push_back(std::move(terms));
      in_rhs.push_back(lo - cst);
    };
    auto add_le = [&](const LinRow& row, double hi) {
      LinRow neg;
      neg.constant = -row.constant;
      for (auto [v, c] : row.terms) neg.add(v, -c);
      add_ge(neg, -hi);
    };

    // Leader capacity: CAP + li - lg >= 0.
    for (int t = 0; t < T; ++t) {
      const int k = inv_slot(t);
      for (int per = 0; per < P; ++per) {
        LinRow row;
        row.constant = cap_of(p.leader, t);
        row.add(vt.lg(t, per), -1.0);
        if (k >= 0) row.add(vt.li(k), 1.0);
        add_ge(row, 0.0);
      }
    }

    // Fringe rows per pair state.
    for (int fi = 0; fi < NF; ++fi) {
      const int firm = idx.fringe_firms[fi];
      for (int t = 0; t < T; ++t) {
        const double C = data.technologies[t].marginal_cost;
        const int k = inv_slot(t);
        for (int per = 0; per < P; ++per) {
          const double W = data.demand.weights[per];
          const double A = data.demand.intercepts[per];
          // Stationarity expression W (C - price) + lambda with the clearing
          // condition substituted.
          LinRow se;
          se.constant = W * (C - A + B * rival[per]);
          for (int t2 = 0; t2 < T; ++t2) se.add(vt.lg(t2, per), W * B);
          for (int fi2 = 0; fi2 < NF; ++fi2) {
            for (int t2 = 0; t2 < T; ++t2) se.add(vt.fg(fi2, t2, per), W * B);
          }
          se.add(vt.fl(fi, t, per), 1.0);

          const std::int8_t b1 = state.r1[idx.r1(fi, t, per)];
          if (b1 == 1) {
            add_eq(se);
          } else {
            add_ge(se, 0.0);
            if (b1 == 0) add_le(se, p.big_m.stat_slack_bound(per));
          }

          const std::int8_t b3 = state.r3[idx.r3(fi, t, per)];
          if (b3 != 1) {
            LinRow cap_row;
            cap_row.constant = cap_of(firm, t);
            cap_row.add(vt.fg(fi, t, per), -1.0);
            if (k >= 0) cap_row.add(vt.fv(fi, k), 1.0);
            add_ge(cap_row, 0.0);
            // The closed-dual branch needs no upper cap: the slack is already
            // bounded by the generation and investment boxes.
          }
        }
      }
      for (int k = 0; k < K; ++k) {
        const int t = idx.investable[k];
        const double ic = *data.technologies[t].invest_cost;
        LinRow row;
        row.constant = ic;
        for (int per = 0; per < P; ++per) row.add(vt.fl(fi, t, per), -1.0);
        const std::int8_t b2 = state.r2[idx.r2(fi, k)];
        if (b2 == 1) {
          add_eq(row);
        } else {
          add_ge(row, 0.0);
          if (b2 == 0) add_le(row, p.big_m.inv_slack_bound(ic));
        }
      }
    }

    // McCormick envelope cuts for the relaxed bilinear terms.
    if (!exact) {
      for (int per = 0; per < P; ++per) {
        const int phi = out.phi_var[per];
        if (phi < 0) continue;
        double y_ub = 0.0;
        for (const auto& [v, a] : yvar[per]) y_ub += a * qp.upper(v);
        qp.lower(phi) = 0.0;
        qp.upper(phi) = std::max(0.0, x_ub[per] * y_ub);
        // phi >= Y x + X y - X Y.
        std::vector<std::pair<int, double>> terms;
        terms.emplace_back(phi, 1.0);
        for (int t = 0; t < T; ++t) {
          terms.emplace_back(red.expr[vt.lg(t, per)].vi, -y_ub);
        }
        for (const auto& [v, a] : yvar[per]) terms.emplace_back(v, -x_ub[per] * a);
        in_rows.push_back(std::move(terms));
        in_rhs.push_back(-x_ub[per] * y_ub);
      }
    }

    if (row_infeasible) {
      out.infeasible = true;
      return out;
    }

    qp.eq_A = MatrixXd::Zero(static_cast<int>(eq_rows.size()), n);
    qp.eq_b = VectorXd::Zero(static_cast<int>(eq_rows.size()));
    for (size_t r = 0; r < eq_rows.size(); ++r) {
      for (auto [v, c] : eq_rows[r]) qp.eq_A(static_cast<int>(r), v) += c;
      qp.eq_b(static_cast<int>(r)) = eq_rhs[r];
    }
    qp.ineq_A = MatrixXd::Zero(static_cast<int>(in_rows.size()), n);
    qp.ineq_b = VectorXd::Zero(static_cast<int>(in_rows.size()));
    for (size_t r = 0; r < in_rows.size(); ++r) {
      for (auto [v, c] : in_rows[r]) qp.ineq_A(static_cast<int>(r), v) += c;
      qp.ineq_b(static_cast<int>(r)) = in_rhs[r];
    }
    out.qp = std::move(qp);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Point evaluation helpers.

struct PointValues {
  std::vector<double> orig;         // values of all original variables
  std::vector<double> prices;       // per period
  double profit = 0.0;              // leader profit, recomputed from primals
};

PointValues evaluate_point(const MpecProblem& p, const BuiltQp& built,
                           const VectorXd& x) {
  const VarTable vt = VarTable::make(p.index);
  PointValues pv;
  pv.orig.assign(vt.total, 0.0);
  for (int v = 0; v < vt.total; ++v) {
    const auto& e = built.red.expr[v];
    pv.orig[v] = e.c0 + (e.vi >= 0 ? e.coeff * x(e.vi) : 0.0);
  }
  const MarketData& data = p.data;
  const int P = vt.P, T = vt.T, NF = vt.NF;
  std::vector<double> rival = p.rival_supply();
  pv.prices.assign(P, 0.0);
  for (int per = 0; per < P; ++per) {
    double total = rival[per];
    for (int t = 0; t < T; ++t) total += pv.orig[vt.lg(t, per)];
    for (int fi = 0; fi < NF; ++fi) {
      for (int t = 0; t < T; ++t) total += pv.orig[vt.fg(fi, t, per)];
    }
    pv.prices[per] = data.demand.intercepts[per] - data.demand.slope * total;
  }
  double profit = 0.0;
  for (int t = 0; t < T; ++t) {
    for (int per = 0; per < P; ++per) {
      profit += data.demand.weights[per] * pv.orig[vt.lg(t, per)] *
                (pv.prices[per] - data.technologies[t].marginal_cost);
    }
  }
  for (int k = 0; k < p.index.nk(); ++k) {
    profit -= *data.technologies[p.index.investable[k]].invest_cost *
              pv.orig[vt.li(k)];
  }
  pv.profit = profit;
  return pv;
}

MpecSolution solution_from_point(const MpecProblem& p, const PointValues& pv,
                                 const ComplementarityPattern& pattern) {
  const VarTable vt = VarTable::make(p.index);
  const MarketData& data = p.data;
  MpecSolution s;
  s.leader_gen.assign(vt.T * vt.P, 0.0);
  s.leader_inv.assign(vt.K, 0.0);
  for (int t = 0; t < vt.T; ++t) {
    for (int per = 0; per < vt.P; ++per) {
      s.leader_gen[t * vt.P + per] = pv.orig[vt.lg(t, per)];
    }
  }
  for (int k = 0; k < vt.K; ++k) s.leader_inv[k] = pv.orig[vt.li(k)];
  s.fringe_gen = Grid3(data.firm_count(), vt.T, vt.P);
  s.fringe_inv = Grid2(data.firm_count(), vt.T);
  s.fringe_lam = Grid3(data.firm_count(), vt.T, vt.P);
  for (int fi = 0; fi < vt.NF; ++fi) {
    const int firm = p.index.fringe_firms[fi];
    for (int t = 0; t < vt.T; ++t) {
      for (int per = 0; per < vt.P; ++per) {
        s.fringe_gen.at(firm, t, per) = pv.orig[vt.fg(fi, t, per)];
        s.fringe_lam.at(firm, t, per) = pv.orig[vt.fl(fi, t, per)];
      }
    }
    for (int k = 0; k < vt.K; ++k) {
      s.fringe_inv.at(firm, p.index.investable[k]) = pv.orig[vt.fv(fi, k)];
    }
  }
  s.prices = pv.prices;
  s.pattern = pattern;
  s.leader_profit = pv.profit;

  // Distance of capped quantities to their structural bounds.
  double headroom = 1.0;
  auto track = [&headroom](double value, double cap) {
    if (cap <= 0.0 || !std::isfinite(cap)) return;
    headroom = std::min(headroom, (cap - value) / cap);
  };
  for (double g : s.leader_gen) track(g, p.big_m.gen_bound());
  for (double v : s.leader_inv) track(v, p.big_m.inv_bound());
  for (int fi = 0; fi < vt.NF; ++fi) {
    const int firm = p.index.fringe_firms[fi];
    for (int t = 0; t < vt.T; ++t) {
      for (int per = 0; per < vt.P; ++per) {
        track(s.fringe_gen.at(firm, t, per), p.big_m.gen_bound());
        track(s.fringe_lam.at(firm, t, per), p.big_m.lambda_bound(per));
      }
      if (data.technologies[t].investable) {
        track(s.fringe_inv.at(firm, t), p.big_m.inv_bound());
      }
    }
  }
  s.big_m_headroom = headroom;
  return s;
}

// Complementarity pattern read off a point, preferring the side that is
// numerically tight. Quantities are normalised by their structural caps.
ComplementarityPattern pattern_from_point(const MpecProblem& p,
                                          const PointValues& pv) {
  const VarTable vt = VarTable::make(p.index);
  const MarketData& data = p.data;
  ComplementarityPattern pat;
  pat.r1.assign(p.index.r1_count(), 0);
  pat.r2.assign(p.index.r2_count(), 0);
  pat.r3.assign(p.index.r3_count(), 0);
  const double tol = 1e-6;
  for (int fi = 0; fi < vt.NF; ++fi) {
    for (int t = 0; t < vt.T; ++t) {
      const double C = data.technologies[t].marginal_cost;
      for (int per = 0; per < vt.P; ++per) {
        const double W = data.demand.weights[per];
        const double gen = pv.orig[vt.fg(fi, t, per)];
        const double lam = pv.orig[vt.fl(fi, t, per)];
        const double se = W * (C - pv.prices[per]) + lam;
        pat.r1[p.index.r1(fi, t, per)] =
            (gen / p.big_m.gen_bound() >
             tol) ||
                    (std::abs(se) / p.big_m.stat_slack_bound(per) <= tol)
                ? 1
                : 0;
        const double cap =
            data.firms[p.index.fringe_firms[fi]].capacity(data.technologies[t].id);
        double invv = 0.0;
        for (int k = 0; k < p.index.nk(); ++k) {
          if (p.index.investable[k] == t) invv = pv.orig[vt.fv(fi, k)];
        }
        const double slack = cap + invv - gen;
        pat.r3[p.index.r3(fi, t, per)] =
            (lam / p.big_m.lambda_bound(per) > tol) ||
                    (std::abs(slack) / (1.0 + cap + p.big_m.inv_bound()) <= tol)
                ? 1
                : 0;
      }
    }
    for (int k = 0; k < p.index.nk(); ++k) {
      const int t = p.index.investable[k];
      const double ic = *data.technologies[t].invest_cost;
      const double invv = pv.orig[vt.fv(fi, k)];
      double lam_sum = 0.0;
      for (int per = 0; per < vt.P; ++per) lam_sum += pv.orig[vt.fl(fi, t, per)];
      pat.r2[p.index.r2(fi, k)] =
          (invv / p.big_m.inv_bound() > tol) || (std::abs(ic - lam_sum) / ic <= tol)
              ? 1
              : 0;
    }
  }
  return pat;
}

// Largest complementarity violation among unfixed pairs, normalised.
struct ViolationScan {
  double worst = 0.0;
  int kind = -1;  // 0: r1, 1: r2, 2: r3
  int index = -1;
};

ViolationScan scan_violations(const MpecProblem& p, const PatternState& state,
                              const PointValues& pv) {
  const VarTable vt = VarTable::make(p.index);
  const MarketData& data = p.data;
  ViolationScan out;
  auto consider = [&out](double v, int kind, int index) {
    if (v > out.worst + 1e-15) {
      out.worst = v;
      out.kind = kind;
      out.index = index;
    }
  };
  for (int fi = 0; fi < vt.NF; ++fi) {
    for (int t = 0; t < vt.T; ++t) {
      const double C = data.technologies[t].marginal_cost;
      for (int per = 0; per < vt.P; ++per) {
        const double W = data.demand.weights[per];
        const int i1 = p.index.r1(fi, t, per);
        const double gen = pv.orig[vt.fg(fi, t, per)];
        const double lam = pv.orig[vt.fl(fi, t, per)];
        if (state.r1[i1] < 0) {
          const double se = W * (C - pv.prices[per]) + lam;
          consider(std::min(gen / p.big_m.gen_bound(),
                            std::max(0.0, se) / p.big_m.stat_slack_bound(per)),
                   0, i1);
        }
        const int i3 = p.index.r3(fi, t, per);
        if (state.r3[i3] < 0) {
          const double cap = data.firms[p.index.fringe_firms[fi]].capacity(
              data.technologies[t].id);
          double invv = 0.0;
          for (int k = 0; k < p.index.nk(); ++k) {
            if (p.index.investable[k] == t) invv = pv.orig[vt.fv(fi, k)];
          }
          const double slack = cap + invv - gen;
          consider(std::min(lam / p.big_m.lambda_bound(per),
                            std::max(0.0, slack) /
                                (1.0 + cap + p.big_m.inv_bound())),
                   2, i3);
        }
      }
    }
    for (int k = 0; k < p.index.nk(); ++k) {
      const int i2 = p.index.r2(fi, k);
      if (state.r2[i2] < 0) {
        const int t = p.index.investable[k];
        const double ic = *data.technologies[t].invest_cost;
        const double invv = pv.orig[vt.fv(fi, k)];
        double lam_sum = 0.0;
        for (int per = 0; per < vt.P; ++per) lam_sum += pv.orig[vt.fl(fi, t, per)];
        consider(std::min(invv / p.big_m.inv_bound(),
                          std::max(0.0, ic - lam_sum) / ic),
                 1, i2);
      }
    }
  }
  return out;
}

// Fallback local solve for a fixed pattern whose reduced objective is not
// concave: the bilinear cross terms stay exact and the inequality rows get
// slack variables so the problem fits the equality-and-box NLP form.
PatternQpResult solve_leaf_nlp(const MpecProblem& p, const PatternState& state,
                               const BuiltQp& exact, const VectorXd& start_core) {
  const QpProblem& qp = exact.qp;
  const int n = qp.n();
  const int m_in = static_cast<int>(qp.ineq_A.rows());
  const int m_eq = static_cast<int>(qp.eq_A.rows());
  const int N = n + m_in;

  MatrixXd Aeq = MatrixXd::Zero(m_eq + m_in, N);
  VectorXd beq = VectorXd::Zero(m_eq + m_in);
  if (m_eq > 0) {
    Aeq.topLeftCorner(m_eq, n) = qp.eq_A;
    beq.head(m_eq) = qp.eq_b;
  }
  if (m_in > 0) {
    Aeq.bottomLeftCorner(m_in, n) = qp.ineq_A;
    Aeq.bottomRightCorner(m_in, m_in) = -MatrixXd::Identity(m_in, m_in);
    beq.tail(m_in) = qp.ineq_b;
  }

  NlpProblem nlp;
  nlp.n = N;
  nlp.eq_count = m_eq + m_in;
  nlp.lower = VectorXd::Zero(N);
  nlp.upper = VectorXd::Constant(N, kInf);
  nlp.lower.head(n) = qp.lower;
  nlp.upper.head(n) = qp.upper;
  MatrixXd H = qp.hessian;
  VectorXd c = qp.linear;
  nlp.objective = [H, c, n](const VectorXd& x, VectorXd* grad) {
    VectorXd xc = x.head(n);
    double val = 0.5 * xc.dot(H * xc) + c.dot(xc);
    if (grad) {
      grad->setZero(x.size());
      grad->head(n) = H * xc + c;
    }
    return val;
  };
  nlp.eq_values = [Aeq, beq](const VectorXd& x) { return Aeq * x - beq; };
  nlp.eq_jt_product = [Aeq](const VectorXd&, const VectorXd& v) {
    return Aeq.transpose() * v;
  };

  VectorXd x0 = VectorXd::Zero(N);
  x0.head(n) = start_core;
  if (m_in > 0) {
    VectorXd s = qp.ineq_A * start_core - qp.ineq_b;
    x0.tail(m_in) = s.cwiseMax(0.0);
  }

  NlpOptions opts;
  opts.max_outer = 60;
  opts.max_inner = 2000;
  NlpResult res = solve_nlp_local(nlp, x0, opts);

  PatternQpResult out;
  out.report = res.report;
  out.report.local_only = true;
  const double feas = res.report.kkt_residual;
  if ((res.report.status == SolveStatus::Optimal) && feas <= 1e-5) {
    PointValues pv = evaluate_point(p, exact, res.x.head(n));
    out.feasible = true;
    out.solution = solution_from_point(p, pv, state.to_pattern());
    out.solution.report = out.report;
    out.solution.report.objective = pv.profit;
  }
  return out;
}

PatternQpResult solve_fixed_pattern(const MpecProblem& p,
                                    const PatternState& state) {
  Builder builder(p, state, /*exact=*/true);
  BuiltQp built = builder.build();
  PatternQpResult out;
  if (built.infeasible) {
    out.report.status = SolveStatus::Infeasible;
    return out;
  }
  try {
    QpResult qr = solve_qp(built.qp);
    out.report = qr.report;
    if (qr.report.status == SolveStatus::Optimal) {
      PointValues pv = evaluate_point(p, built, qr.x);
      out.feasible = true;
      out.solution = solution_from_point(p, pv, state.to_pattern());
      out.solution.report = qr.report;
      out.solution.report.objective = pv.profit;
    }
    return out;
  } catch (const NonConvexError&) {
    // Bound the leaf with the envelope relaxation, then polish locally.
    Builder relax_builder(p, state, /*exact=*/false);
    BuiltQp relaxed = relax_builder.build();
    if (relaxed.infeasible) {
      out.report.status = SolveStatus::Infeasible;
      return out;
    }
    QpOptions qpo;
    qpo.skip_convexity_check = true;
    QpResult qr = solve_qp(relaxed.qp, qpo);
    if (qr.report.status != SolveStatus::Optimal) {
      out.report = qr.report;
      return out;
    }
    Builder exact_builder(p, state, /*exact=*/true);
    BuiltQp exact = exact_builder.build();
    VectorXd start = qr.x.head(exact.qp.n());
    return solve_leaf_nlp(p, state, exact, start);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

bool ComplementarityPattern::lex_less(const ComplementarityPattern& other) const {
  if (r1 != other.r1) return r1 < other.r1;
  if (r2 != other.r2) return r2 < other.r2;
  return r3 < other.r3;
}

BigMPolicy BigMPolicy::from_data(const MarketData& data) {
  BigMPolicy m;
  double a_max = 0.0;
  for (double a : data.demand.intercepts) a_max = std::max(a_max, a);
  double c_max = 0.0;
  for (const auto& t : data.technologies) c_max = std::max(c_max, t.marginal_cost);
  m.gen_cap = a_max / data.demand.slope;
  m.inv_cap = m.gen_cap;
  m.lambda_cap.resize(data.periods());
  m.stat_slack_cap.resize(data.periods());
  for (int p = 0; p < data.periods(); ++p) {
    m.lambda_cap[p] = data.demand.weights[p] * a_max;
    m.stat_slack_cap[p] = data.demand.weights[p] * (a_max + c_max);
  }
  return m;
}

std::vector<double> MpecProblem::rival_supply() const {
  std::vector<double> out(data.periods(), 0.0);
  for (int f = 0; f < data.firm_count(); ++f) {
    if (f == leader || data.firms[f].kind != FirmKind::PriceMaking) continue;
    for (int t = 0; t < data.tech_count(); ++t) {
      for (int p = 0; p < data.periods(); ++p) out[p] += rival_gen.at(f, t, p);
    }
  }
  return out;
}

StrategyProfile MpecSolution::to_profile(const MpecProblem& p) const {
  StrategyProfile s = StrategyProfile::zeros(p.data);
  const int T = p.index.techs, P = p.index.periods;
  for (int f = 0; f < p.data.firm_count(); ++f) {
    if (f == p.leader) {
      for (int t = 0; t < T; ++t) {
        for (int per = 0; per < P; ++per) {
          s.gen.at(f, t, per) = leader_gen[t * P + per];
        }
      }
      for (int k = 0; k < p.index.nk(); ++k) {
        s.inv.at(f, p.index.investable[k]) = leader_inv[k];
      }
    } else if (p.data.firms[f].kind == FirmKind::PriceMaking) {
      for (int t = 0; t < T; ++t) {
        for (int per = 0; per < P; ++per) {
          s.gen.at(f, t, per) = p.rival_gen.at(f, t, per);
        }
        s.inv.at(f, t) = p.rival_inv.at(f, t);
      }
    } else {
      for (int t = 0; t < T; ++t) {
        for (int per = 0; per < P; ++per) {
          s.gen.at(f, t, per) = fringe_gen.at(f, t, per);
          s.fringe_duals.at(f, t, per) = fringe_lam.at(f, t, per);
        }
        s.inv.at(f, t) = fringe_inv.at(f, t);
      }
    }
  }
  s.clear_prices(p.data);
  return s;
}

MpecProblem build_mpec(const MarketData& data, const std::string& leader_id,
                       const Grid3& rival_gen, const Grid2& rival_inv) {
  validate_or_throw(data, /*require_firm_mix=*/true);
  const int leader = data.firm_index(leader_id);
  if (leader < 0 || data.firms[leader].kind != FirmKind::PriceMaking) {
    throw UnknownLeader("build_mpec: '" + leader_id +
                        "' is not a price-making firm");
  }
  MpecProblem p;
  p.data = data;
  p.leader = leader;
  p.rival_gen = rival_gen.empty()
                    ? Grid3(data.firm_count(), data.tech_count(), data.periods())
                    : rival_gen;
  p.rival_inv = rival_inv.empty() ? Grid2(data.firm_count(), data.tech_count())
                                  : rival_inv;
  p.big_m = BigMPolicy::from_data(data);
  p.index.fringe_firms = data.price_taker_indices();
  p.index.investable = data.investable_tech_indices();
  p.index.techs = data.tech_count();
  p.index.periods = data.periods();

  // Rival decisions must respect the rivals' own capacity constraints.
  for (int f = 0; f < data.firm_count(); ++f) {
    if (f == leader || data.firms[f].kind != FirmKind::PriceMaking) continue;
    for (int t = 0; t < data.tech_count(); ++t) {
      const double cap = data.firms[f].capacity(data.technologies[t].id);
      const double inv = p.rival_inv.at(f, t);
      if (inv < -1e-9) {
        throw ValidationError("build_mpec: rival investment negative");
      }
      for (int per = 0; per < data.periods(); ++per) {
        const double g = p.rival_gen.at(f, t, per);
        if (g < -1e-9) {
          throw ValidationError("build_mpec: rival generation negative");
        }
        if (g > cap + inv + 1e-6 * (1.0 + cap + inv)) {
          throw ValidationError("build_mpec: rival generation for firm " +
                                data.firms[f].id + " exceeds capacity");
        }
      }
    }
  }
  return p;
}

MpecProblem build_mpec(const MarketData& data, const std::string& leader_id,
                       const StrategyProfile& rivals) {
  return build_mpec(data, leader_id, rivals.gen, rivals.inv);
}

MpecProblem build_mpec(const MarketData& data, const std::string& leader_id) {
  return build_mpec(data, leader_id, Grid3{}, Grid2{});
}

PatternQpResult pattern_qp(const MpecProblem& p,
                           const ComplementarityPattern& pattern) {
  if (static_cast<int>(pattern.r1.size()) != p.index.r1_count() ||
      static_cast<int>(pattern.r2.size()) != p.index.r2_count() ||
      static_cast<int>(pattern.r3.size()) != p.index.r3_count()) {
    throw std::invalid_argument("pattern_qp: pattern size mismatch");
  }
  return solve_fixed_pattern(p, PatternState::from_pattern(pattern));
}

void fringe_response(const MarketData& data,
                     const std::vector<double>& pm_supply,
                     StrategyProfile& profile) {
  MarketData sub;
  sub.technologies = data.technologies;
  sub.demand = data.demand;
  std::vector<int> firm_map;
  for (int f = 0; f < data.firm_count(); ++f) {
    if (data.firms[f].kind == FirmKind::PriceTaking) {
      sub.firms.push_back(data.firms[f]);
      firm_map.push_back(f);
    }
  }
  MarketLcpOptions opts;
  opts.exogenous_supply = pm_supply;
  LcpProblem lcp = build_market_lcp(sub, CvConfig{}, opts);
  LcpSolution sol = lemke_solve(lcp);
  const MarketLcpIndex idx = make_market_index(sub);
  MarketOutcome out = outcome_from_lcp(sub, idx, sol.z, pm_supply);
  for (size_t i = 0; i < firm_map.size(); ++i) {
    const int f = firm_map[i];
    for (int t = 0; t < data.tech_count(); ++t) {
      for (int p = 0; p < data.periods(); ++p) {
        profile.gen.at(f, t, p) = out.gen.at(static_cast<int>(i), t, p);
        profile.fringe_duals.at(f, t, p) =
            out.capacity_duals.at(static_cast<int>(i), t, p);
      }
      profile.inv.at(f, t) = out.inv.at(static_cast<int>(i), t);
    }
  }
  profile.clear_prices(data);
}

ComplementarityPattern extract_pattern(const MpecProblem& p,
                                       const StrategyProfile& profile) {
  const VarTable vt = VarTable::make(p.index);
  PointValues pv;
  pv.orig.assign(vt.total, 0.0);
  for (int t = 0; t < vt.T; ++t) {
    for (int per = 0; per < vt.P; ++per) {
      pv.orig[vt.lg(t, per)] = profile.gen.at(p.leader, t, per);
    }
  }
  for (int k = 0; k < vt.K; ++k) {
    pv.orig[vt.li(k)] = profile.inv.at(p.leader, p.index.investable[k]);
  }
  for (int fi = 0; fi < vt.NF; ++fi) {
    const int firm = p.index.fringe_firms[fi];
    for (int t = 0; t < vt.T; ++t) {
      for (int per = 0; per < vt.P; ++per) {
        pv.orig[vt.fg(fi, t, per)] = profile.gen.at(firm, t, per);
        pv.orig[vt.fl(fi, t, per)] = profile.fringe_duals.at(firm, t, per);
      }
    }
    for (int k = 0; k < vt.K; ++k) {
      pv.orig[vt.fv(fi, k)] = profile.inv.at(firm, p.index.investable[k]);
    }
  }
  StrategyProfile tmp = profile;
  tmp.clear_prices(p.data);
  pv.prices = tmp.prices;
  return pattern_from_point(p, pv);
}

MpecSolution solve_mpec(const MpecProblem& p,
                        const std::optional<StrategyProfile>& warm,
                        const MpecOptions& options) {
  struct Incumbent {
    double profit = -kInf;
    MpecSolution solution;
    bool local_only = false;
    bool valid = false;
  };
  Incumbent best;
  const double tie_eps = 1e-9;

  auto offer = [&](const MpecSolution& cand, bool local_only) {
    const double gap_scale = 1e-9 * (1.0 + std::abs(cand.leader_profit));
    if (!best.valid || cand.leader_profit > best.profit + gap_scale ||
        (cand.leader_profit > best.profit - tie_eps * (1.0 + std::abs(best.profit)) &&
         cand.pattern.lex_less(best.solution.pattern))) {
      best.profit = cand.leader_profit;
      best.solution = cand;
      best.local_only = local_only;
      best.valid = true;
    }
  };

  // Incumbent seeds: the warm profile's pattern first, then the fringe
  // equilibrium response against frozen price makers.
  if (warm) {
    ComplementarityPattern pat = extract_pattern(p, *warm);
    PatternQpResult res = pattern_qp(p, pat);
    if (res.feasible) offer(res.solution, res.report.local_only);
  }
  {
    StrategyProfile base = warm ? *warm : StrategyProfile::zeros(p.data);
    std::vector<double> pm_supply(p.data.periods(), 0.0);
    for (int f = 0; f < p.data.firm_count(); ++f) {
      if (p.data.firms[f].kind != FirmKind::PriceMaking) continue;
      for (int t = 0; t < p.data.tech_count(); ++t) {
        for (int per = 0; per < p.data.periods(); ++per) {
          pm_supply[per] += f == p.leader
                                ? (warm ? warm->gen.at(f, t, per) : 0.0)
                                : p.rival_gen.at(f, t, per);
        }
      }
    }
    fringe_response(p.data, pm_supply, base);
    ComplementarityPattern pat = extract_pattern(p, base);
    PatternQpResult res = pattern_qp(p, pat);
    if (res.feasible) offer(res.solution, res.report.local_only);
  }

  struct Node {
    PatternState state;
    double bound = kInf;
    int id = 0;
  };
  struct NodeOrder {
    bool operator()(const Node& a, const Node& b) const {
      if (a.bound != b.bound) return a.bound < b.bound;  // max-heap on bound
      return a.id > b.id;                                // then FIFO
    }
  };
  std::priority_queue<Node, std::vector<Node>, NodeOrder> queue;
  int next_id = 0;
  queue.push({PatternState::unfixed(p.index), kInf, next_id++});

  int processed = 0;
  double outstanding_bound = -kInf;  // bounds we could not resolve
  auto gap_abs = [&](double profit) {
    return options.gap_tol * std::max(1.0, std::abs(profit));
  };

  while (!queue.empty()) {
    Node node = queue.top();
    if (best.valid && node.bound <= best.profit + gap_abs(best.profit)) {
      break;  // best-first: every remaining node is dominated
    }
    queue.pop();
    if (processed >= options.node_budget) {
      outstanding_bound = std::max(outstanding_bound, node.bound);
      continue;
    }
    ++processed;

    if (node.state.full()) {
      PatternQpResult res = solve_fixed_pattern(p, node.state);
      if (res.feasible) {
        offer(res.solution, res.report.local_only);
      } else if (res.report.status != SolveStatus::Infeasible &&
                 res.report.status != SolveStatus::Optimal) {
        // Leaf we could neither solve nor prune: account for it in the gap.
        outstanding_bound = std::max(outstanding_bound, node.bound);
      }
      continue;
    }

    Builder builder(p, node.state, /*exact=*/false);
    BuiltQp built = builder.build();
    if (built.infeasible) continue;
    QpOptions qpo;
    qpo.skip_convexity_check = true;
    QpResult qr = solve_qp(built.qp, qpo);
    if (qr.report.status == SolveStatus::Infeasible) continue;
    if (qr.report.status != SolveStatus::Optimal) {
      outstanding_bound = std::max(outstanding_bound, node.bound);
      continue;
    }
    const double bound = -qr.report.objective;  // maximisation value
    if (best.valid && bound <= best.profit + gap_abs(best.profit)) continue;

    PointValues pv = evaluate_point(p, built, qr.x);
    ViolationScan scan = scan_violations(p, node.state, pv);

    if (scan.worst <= options.comp_tol) {
      // The relaxation solution already satisfies every dropped
      // complementarity: it is feasible for the original problem.
      ComplementarityPattern pat = pattern_from_point(p, pv);
      MpecSolution cand = solution_from_point(p, pv, pat);
      cand.report.status = SolveStatus::Optimal;
      cand.report.objective = cand.leader_profit;
      offer(cand, false);
      if (bound <= best.profit + gap_abs(best.profit)) continue;
      // The remaining gap is envelope slack. Fixing pairs shrinks the
      // envelope boxes and fully fixed nodes are solved exactly, so drive
      // this branch toward a leaf: pick the first unfixed pair in the
      // period with the largest weighted envelope slack.
      const VarTable vt = VarTable::make(p.index);
      std::vector<std::pair<double, int>> period_slack;
      for (int per = 0; per < p.index.periods; ++per) {
        if (built.phi_var[per] < 0) continue;
        double x_p = 0.0;
        for (int t = 0; t < p.index.techs; ++t) x_p += pv.orig[vt.lg(t, per)];
        double y_var = 0.0;
        for (int fi = 0; fi < p.index.nf(); ++fi) {
          for (int t = 0; t < p.index.techs; ++t) {
            const auto& e = built.red.expr[vt.fg(fi, t, per)];
            if (e.vi >= 0) y_var += pv.orig[vt.fg(fi, t, per)] - e.c0;
          }
        }
        const double phi = qr.x(built.phi_var[per]);
        period_slack.emplace_back(-std::abs(phi - x_p * y_var) *
                                      p.data.demand.weights[per] *
                                      p.data.demand.slope,
                                  per);
      }
      std::sort(period_slack.begin(), period_slack.end());
      int pick_kind = -1, pick_index = -1;
      for (const auto& [neg_slack, per] : period_slack) {
        for (int fi = 0; fi < p.index.nf() && pick_kind < 0; ++fi) {
          for (int t = 0; t < p.index.techs && pick_kind < 0; ++t) {
            const int i1 = p.index.r1(fi, t, per);
            const int i3 = p.index.r3(fi, t, per);
            if (node.state.r1[i1] < 0) {
              pick_kind = 0;
              pick_index = i1;
            } else if (node.state.r3[i3] < 0) {
              pick_kind = 2;
              pick_index = i3;
            }
          }
        }
        if (pick_kind >= 0) break;
      }
      if (pick_kind < 0) {
        for (int i = 0; i < p.index.r2_count() && pick_kind < 0; ++i) {
          if (node.state.r2[i] < 0) {
            pick_kind = 1;
            pick_index = i;
          }
        }
      }
      if (pick_kind < 0) {
        // nothing left to branch on; the bound is as tight as it gets
        outstanding_bound = std::max(outstanding_bound, bound);
        continue;
      }
      scan.kind = pick_kind;
      scan.index = pick_index;
    }

    for (int side = 0; side <= 1; ++side) {
      Node child;
      child.state = node.state;
      child.bound = std::min(node.bound, bound);
      child.id = next_id++;
      auto& bits = scan.kind == 0   ? child.state.r1
                   : scan.kind == 1 ? child.state.r2
                                    : child.state.r3;
      bits[scan.index] = static_cast<std::int8_t>(side);
      queue.push(std::move(child));
    }
  }

  double upper = best.valid ? best.profit : -kInf;
  if (!queue.empty()) upper = std::max(upper, queue.top().bound);
  upper = std::max(upper, outstanding_bound);

  if (!best.valid) {
    throw std::runtime_error("solve_mpec: no feasible point found");
  }
  MpecSolution out = best.solution;
  out.report.objective = out.leader_profit;
  out.report.iterations = processed;
  out.report.local_only = best.local_only;
  out.report.gap = std::isfinite(upper)
                       ? std::max(0.0, (upper - best.profit) /
                                           std::max(1.0, std::abs(best.profit)))
                       : kInf;
  out.report.status = out.report.gap <= options.gap_tol
                          ? SolveStatus::Optimal
                          : SolveStatus::IterationLimit;
  return out;
}

double check_lower_level_optimality(const MarketData& data,
                                    const StrategyProfile& profile) {
  const BigMPolicy big_m = BigMPolicy::from_data(data);
  const int T = data.tech_count(), P = data.periods();
  const std::vector<int> investable = data.investable_tech_indices();
  const int K = static_cast<int>(investable.size());
  double worst = 0.0;

  for (int f : data.price_taker_indices()) {
    // Embedded profit of the fringe firm at the given prices.
    double embedded = profile.firm_profit(data, f);

    // Best response LP at fixed prices.
    const int n = T * P + K;
    QpProblem qp = QpProblem::make(n);
    auto gv = [&](int t, int per) { return t * P + per; };
    for (int t = 0; t < T; ++t) {
      for (int per = 0; per < P; ++per) {
        qp.linear(gv(t, per)) =
            data.demand.weights[per] *
            (data.technologies[t].marginal_cost - profile.prices[per]);
        qp.upper(gv(t, per)) = big_m.gen_bound();
      }
    }
    for (int k = 0; k < K; ++k) {
      qp.linear(T * P + k) = *data.technologies[investable[k]].invest_cost;
      qp.upper(T * P + k) = big_m.inv_bound();
    }
    qp.lower.setZero();
    qp.ineq_A = MatrixXd::Zero(T * P, n);
    qp.ineq_b = VectorXd::Zero(T * P);
    int row = 0;
    for (int t = 0; t < T; ++t) {
      int k = -1;
      for (int kk = 0; kk < K; ++kk) {
        if (investable[kk] == t) k = kk;
      }
      for (int per = 0; per < P; ++per, ++row) {
        qp.ineq_A(row, gv(t, per)) = -1.0;
        if (k >= 0) qp.ineq_A(row, T * P + k) = 1.0;
        qp.ineq_b(row) = -data.firms[f].capacity(data.technologies[t].id);
      }
    }
    QpOptions qpo;
    qpo.skip_convexity_check = true;
    QpResult res = solve_qp(qp, qpo);
    if (res.report.status != SolveStatus::Optimal) continue;
    const double lp_best = -res.report.objective;
    worst = std::max(worst, lp_best - embedded);
  }
  return worst;
}

double check_lower_level_optimality(const MpecProblem& p,
                                    const MpecSolution& s) {
  return check_lower_level_optimality(p.data, s.to_profile(p));
}

double mpec_leader_objective(const MpecProblem& p, const VectorXd& stacked,
                             VectorXd* grad) {
  const VarTable vt = VarTable::make(p.index);
  const MarketData& data = p.data;
  const double B = data.demand.slope;
  const std::vector<double> rival = p.rival_supply();
  const int T = vt.T, P = vt.P, K = vt.K, NF = vt.NF;
  const int n_lg = T * P;
  const int n_fg = NF * T * P;
  if (stacked.size() != n_lg + K + n_fg) {
    throw std::invalid_argument("mpec_leader_objective: bad vector size");
  }
  if (grad) grad->setZero(stacked.size());

  double value = 0.0;
  for (int per = 0; per < P; ++per) {
    const double W = data.demand.weights[per];
    double x_p = 0.0, y_p = 0.0;
    for (int t = 0; t < T; ++t) x_p += stacked(t * P + per);
    for (int fi = 0; fi < NF; ++fi) {
      for (int t = 0; t < T; ++t) {
        y_p += stacked(n_lg + K + (fi * T + t) * P + per);
      }
    }
    const double price = data.demand.intercepts[per] -
                         B * (rival[per] + x_p + y_p);
    for (int t = 0; t < T; ++t) {
      const double g = stacked(t * P + per);
      value += W * g * (price - data.technologies[t].marginal_cost);
    }
    if (grad) {
      for (int t = 0; t < T; ++t) {
        (*grad)(t * P + per) +=
            W * (price - data.technologies[t].marginal_cost) - W * B * x_p;
      }
      for (int fi = 0; fi < NF; ++fi) {
        for (int t = 0; t < T; ++t) {
          (*grad)(n_lg + K + (fi * T + t) * P + per) -= W * B * x_p;
        }
      }
    }
  }
  for (int k = 0; k < K; ++k) {
    const double ic = *data.technologies[p.index.investable[k]].invest_cost;
    value -= ic * stacked(n_lg + k);
    if (grad) (*grad)(n_lg + k) -= ic;
  }
  return value;
}

int mpec_leader_objective_dim(const MpecProblem& p) {
  const VarTable vt = VarTable::make(p.index);
  return vt.T * vt.P + vt.K + vt.NF * vt.T * vt.P;
}

}  // namespace fringe
