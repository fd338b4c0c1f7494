#include "fringe/epec.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

#include <Eigen/Sparse>

namespace fringe {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Structure of the aggregated stationarity system, in solver scaling.

struct LmStructure {
  LmIndex idx;
  std::vector<double> scale;  // physical value = scale * solver value
  VectorXd lower, upper;      // solver units
  Eigen::SparseMatrix<double> A;  // linear constraint part, solver units
  VectorXd row_const;
  struct Term {
    int row, i, j;
    double coef;
  };
  std::vector<Term> bilinear;   // constraint products
  std::vector<Term> objective;  // complementarity products (row unused)
  double obj_scale = 1.0;       // physical = obj_scale * solver objective
  int rows = 0;

  VectorXd to_solver(const VectorXd& physical) const {
    VectorXd x(physical.size());
    for (int i = 0; i < x.size(); ++i) x(i) = physical(i) / scale[i];
    return x;
  }
  VectorXd to_physical(const VectorXd& solver) const {
    VectorXd x(solver.size());
    for (int i = 0; i < x.size(); ++i) x(i) = solver(i) * scale[i];
    return x;
  }

  VectorXd constraints(const VectorXd& x) const {
    VectorXd c = A * x + row_const;
    for (const Term& t : bilinear) c(t.row) += t.coef * x(t.i) * x(t.j);
    return c;
  }
  VectorXd constraints_jt(const VectorXd& x, const VectorXd& v) const {
    VectorXd g = A.transpose() * v;
    for (const Term& t : bilinear) {
      g(t.i) += t.coef * x(t.j) * v(t.row);
      g(t.j) += t.coef * x(t.i) * v(t.row);
    }
    return g;
  }
  double objective_value(const VectorXd& x, VectorXd* grad) const {
    double val = 0.0;
    if (grad) grad->setZero(x.size());
    for (const Term& t : objective) {
      val += t.coef * x(t.i) * x(t.j);
      if (grad) {
        (*grad)(t.i) += t.coef * x(t.j);
        (*grad)(t.j) += t.coef * x(t.i);
      }
    }
    return val;
  }
};

namespace {

LmIndex make_lm_index(const MarketData& data) {
  LmIndex idx;
  idx.leaders = data.price_maker_indices();
  idx.fringe = data.price_taker_indices();
  idx.investable = data.investable_tech_indices();
  idx.T = data.tech_count();
  idx.P = data.periods();
  const int L = idx.nl(), NF = idx.nf(), T = idx.T, P = idx.P, K = idx.nk();

  int at = 0;
  idx.pg0 = at; at += L * T * P;
  idx.pi0 = at; at += L * K;
  idx.fg0 = at; at += NF * T * P;
  idx.fv0 = at; at += NF * K;
  idx.fl0 = at; at += NF * T * P;
  idx.sc0 = at; at += L * T * P;
  idx.sg0 = at; at += NF * T * P;
  idx.si0 = at; at += NF * K;
  idx.sf0 = at; at += NF * T * P;
  idx.lampm0 = at; at += L * T * P;
  idx.mult0 = at;

  int local = 0;
  idx.chi_g0 = local; local += T * P;
  idx.chi_i0 = local; local += K;
  idx.mu_clr0 = local; local += T * P;
  idx.a_g0 = local; local += NF * T * P;
  idx.mu_g0 = local; local += NF * T * P;
  idx.mu_sg0 = local; local += NF * T * P;
  idx.w_g0 = local; local += NF * T * P;
  idx.a_i0 = local; local += NF * K;
  idx.mu_i0 = local; local += NF * K;
  idx.mu_si0 = local; local += NF * K;
  idx.w_i0 = local; local += NF * K;
  idx.a_c0 = local; local += NF * T * P;
  idx.mu_c0 = local; local += NF * T * P;
  idx.mu_sf0 = local; local += NF * T * P;
  idx.w_c0 = local; local += NF * T * P;
  idx.per_leader = local;
  idx.total = at + L * local;
  return idx;
}

// Raw (physical-unit) row under construction.
struct RawRow {
  double constant = 0.0;
  std::vector<std::pair<int, double>> lin;
  std::vector<std::tuple<int, int, double>> bil;

  void add(int v, double c) { lin.emplace_back(v, c); }
  void addbil(int i, int j, double c) { bil.emplace_back(i, j, c); }
};

struct LmBuilder {
  const MarketData& data;
  LmIndex idx;
  std::vector<double> scale;
  std::vector<RawRow> rows;
  std::vector<std::tuple<int, int, double>> obj;

  explicit LmBuilder(const MarketData& d) : data(d), idx(make_lm_index(d)) {
    scale.assign(idx.total, 1.0);
  }

  int inv_slot(int t) const {
    for (int k = 0; k < idx.nk(); ++k) {
      if (idx.investable[k] == t) return k;
    }
    return -1;
  }

  void assign_scales() {
    const double sQty = 1e3;    // MW-type variables
    const double sMoney = 1e5;  // weighted price / rent type variables
    const double sAlpha = 1e3;
    const double sBil = 1e2;
    auto set_range = [&](int begin, int count, double s) {
      for (int i = 0; i < count; ++i) scale[begin + i] = s;
    };
    const int L = idx.nl(), NF = idx.nf(), T = idx.T, P = idx.P, K = idx.nk();
    set_range(idx.pg0, L * T * P, sQty);
    set_range(idx.pi0, L * K, sQty);
    set_range(idx.fg0, NF * T * P, sQty);
    set_range(idx.fv0, NF * K, sQty);
    set_range(idx.fl0, NF * T * P, sMoney);
    set_range(idx.sc0, L * T * P, sQty);
    set_range(idx.sg0, NF * T * P, sMoney);
    set_range(idx.si0, NF * K, sMoney);
    set_range(idx.sf0, NF * T * P, sQty);
    set_range(idx.lampm0, L * T * P, sMoney);
    for (int l = 0; l < L; ++l) {
      set_range(idx.mult(l, idx.chi_g0), T * P, sMoney);
      set_range(idx.mult(l, idx.chi_i0), K, sMoney);
      set_range(idx.mult(l, idx.mu_clr0), T * P, sMoney);
      set_range(idx.mult(l, idx.a_g0), NF * T * P, sAlpha);
      set_range(idx.mult(l, idx.mu_g0), NF * T * P, sMoney);
      set_range(idx.mult(l, idx.mu_sg0), NF * T * P, sMoney);
      set_range(idx.mult(l, idx.w_g0), NF * T * P, sBil);
      set_range(idx.mult(l, idx.a_i0), NF * K, sAlpha);
      set_range(idx.mult(l, idx.mu_i0), NF * K, sMoney);
      set_range(idx.mult(l, idx.mu_si0), NF * K, sMoney);
      set_range(idx.mult(l, idx.w_i0), NF * K, sBil);
      set_range(idx.mult(l, idx.a_c0), NF * T * P, sAlpha);
      set_range(idx.mult(l, idx.mu_c0), NF * T * P, sMoney);
      set_range(idx.mult(l, idx.mu_sf0), NF * T * P, sMoney);
      set_range(idx.mult(l, idx.w_c0), NF * T * P, sBil);
    }
  }

  void build_rows() {
    const int L = idx.nl(), NF = idx.nf(), T = idx.T, P = idx.P, K = idx.nk();
    const double B = data.demand.slope;

    auto market_total = [&](RawRow& row, int p, double coef) {
      for (int l = 0; l < L; ++l) {
        for (int t = 0; t < T; ++t) row.add(idx.pg(l, t, p), coef);
      }
      for (int f = 0; f < NF; ++f) {
        for (int t = 0; t < T; ++t) row.add(idx.fg(f, t, p), coef);
      }
    };

    // Feasibility rows.
    for (int l = 0; l < L; ++l) {
      const Firm& firm = data.firms[idx.leaders[l]];
      for (int t = 0; t < T; ++t) {
        const int k = inv_slot(t);
        for (int p = 0; p < P; ++p) {
          RawRow row;
          row.constant = firm.capacity(data.technologies[t].id);
          if (k >= 0) row.add(idx.pi(l, k), 1.0);
          row.add(idx.pg(l, t, p), -1.0);
          row.add(idx.sc(l, t, p), -1.0);
          rows.push_back(std::move(row));
        }
      }
    }
    for (int f = 0; f < NF; ++f) {
      for (int t = 0; t < T; ++t) {
        const double C = data.technologies[t].marginal_cost;
        for (int p = 0; p < P; ++p) {
          const double W = data.demand.weights[p];
          RawRow row;
          row.constant = W * (C - data.demand.intercepts[p]);
          market_total(row, p, W * B);
          row.add(idx.fl(f, t, p), 1.0);
          row.add(idx.sg(f, t, p), -1.0);
          rows.push_back(std::move(row));
        }
      }
      for (int k = 0; k < K; ++k) {
        const int t = idx.investable[k];
        RawRow row;
        row.constant = *data.technologies[t].invest_cost;
        for (int p = 0; p < P; ++p) row.add(idx.fl(f, t, p), -1.0);
        row.add(idx.si(f, k), -1.0);
        rows.push_back(std::move(row));
      }
      const Firm& firm = data.firms[idx.fringe[f]];
      for (int t = 0; t < T; ++t) {
        const int k = inv_slot(t);
        for (int p = 0; p < P; ++p) {
          RawRow row;
          row.constant = firm.capacity(data.technologies[t].id);
          row.add(idx.fg(f, t, p), -1.0);
          if (k >= 0) row.add(idx.fv(f, k), 1.0);
          row.add(idx.sf(f, t, p), -1.0);
          rows.push_back(std::move(row));
        }
      }
    }

    // Stationarity rows, one block per leader.
    for (int l = 0; l < L; ++l) {
      for (int t = 0; t < T; ++t) {
        const double C = data.technologies[t].marginal_cost;
        for (int p = 0; p < P; ++p) {
          const double W = data.demand.weights[p];
          RawRow row;  // d/d pg(l,t,p)
          row.constant = W * (C - data.demand.intercepts[p]);
          market_total(row, p, W * B);
          for (int t2 = 0; t2 < T; ++t2) row.add(idx.pg(l, t2, p), W * B);
          row.add(idx.lam_pm(l, t, p), 1.0);
          for (int f = 0; f < NF; ++f) {
            for (int t2 = 0; t2 < T; ++t2) {
              row.add(idx.a_g(l, f, t2, p), W * B);
            }
          }
          row.add(idx.chi_g(l, t, p), -1.0);
          rows.push_back(std::move(row));
        }
      }
      for (int k = 0; k < K; ++k) {
        const int t = idx.investable[k];
        RawRow row;  // d/d pi(l,k)
        row.constant = *data.technologies[t].invest_cost;
        for (int p = 0; p < P; ++p) row.add(idx.lam_pm(l, t, p), -1.0);
        row.add(idx.chi_i(l, k), -1.0);
        rows.push_back(std::move(row));
      }
      for (int f = 0; f < NF; ++f) {
        for (int t = 0; t < T; ++t) {
          for (int p = 0; p < P; ++p) {
            const double W = data.demand.weights[p];
            RawRow row;  // d/d fg(f,t,p)
            for (int t2 = 0; t2 < T; ++t2) row.add(idx.pg(l, t2, p), W * B);
            for (int f2 = 0; f2 < NF; ++f2) {
              for (int t2 = 0; t2 < T; ++t2) {
                row.add(idx.a_g(l, f2, t2, p), W * B);
              }
            }
            row.add(idx.a_c(l, f, t, p), -1.0);
            row.addbil(idx.sg(f, t, p), idx.w_g(l, f, t, p), 1.0);
            row.add(idx.mu_g(l, f, t, p), -1.0);
            rows.push_back(std::move(row));
          }
        }
        for (int k = 0; k < K; ++k) {
          const int t = idx.investable[k];
          RawRow row;  // d/d fv(f,k)
          for (int p = 0; p < P; ++p) row.add(idx.a_c(l, f, t, p), 1.0);
          row.addbil(idx.si(f, k), idx.w_i(l, f, k), 1.0);
          row.add(idx.mu_i(l, f, k), -1.0);
          rows.push_back(std::move(row));
        }
        for (int t = 0; t < T; ++t) {
          const int k = inv_slot(t);
          for (int p = 0; p < P; ++p) {
            RawRow row;  // d/d fl(f,t,p)
            row.add(idx.a_g(l, f, t, p), 1.0);
            if (k >= 0) row.add(idx.a_i(l, f, k), -1.0);
            row.add(idx.mu_c(l, f, t, p), -1.0);
            row.addbil(idx.sf(f, t, p), idx.w_c(l, f, t, p), 1.0);
            rows.push_back(std::move(row));
          }
        }
      }
      for (int t = 0; t < T; ++t) {
        for (int p = 0; p < P; ++p) {
          RawRow row;  // d/d sc(l,t,p)
          row.add(idx.lam_pm(l, t, p), 1.0);
          row.add(idx.mu_clr(l, t, p), -1.0);
          rows.push_back(std::move(row));
        }
      }
      for (int f = 0; f < NF; ++f) {
        for (int t = 0; t < T; ++t) {
          for (int p = 0; p < P; ++p) {
            RawRow row;  // d/d sg(f,t,p)
            row.add(idx.a_g(l, f, t, p), -1.0);
            row.add(idx.mu_sg(l, f, t, p), -1.0);
            row.addbil(idx.fg(f, t, p), idx.w_g(l, f, t, p), 1.0);
            rows.push_back(std::move(row));
          }
        }
        for (int k = 0; k < K; ++k) {
          RawRow row;  // d/d si(f,k)
          row.add(idx.a_i(l, f, k), -1.0);
          row.add(idx.mu_si(l, f, k), -1.0);
          row.addbil(idx.fv(f, k), idx.w_i(l, f, k), 1.0);
          rows.push_back(std::move(row));
        }
        for (int t = 0; t < T; ++t) {
          for (int p = 0; p < P; ++p) {
            RawRow row;  // d/d sf(f,t,p)
            row.add(idx.a_c(l, f, t, p), -1.0);
            row.add(idx.mu_sf(l, f, t, p), -1.0);
            row.addbil(idx.fl(f, t, p), idx.w_c(l, f, t, p), 1.0);
            rows.push_back(std::move(row));
          }
        }
      }
    }
  }

  void build_objective() {
    const int L = idx.nl(), NF = idx.nf(), T = idx.T, P = idx.P, K = idx.nk();
    auto prod = [&](int i, int j) { obj.emplace_back(i, j, 1.0); };
    for (int f = 0; f < NF; ++f) {
      for (int t = 0; t < T; ++t) {
        for (int p = 0; p < P; ++p) {
          prod(idx.fg(f, t, p), idx.sg(f, t, p));
          prod(idx.fl(f, t, p), idx.sf(f, t, p));
        }
      }
      for (int k = 0; k < K; ++k) prod(idx.fv(f, k), idx.si(f, k));
    }
    for (int l = 0; l < L; ++l) {
      for (int t = 0; t < T; ++t) {
        for (int p = 0; p < P; ++p) {
          prod(idx.pg(l, t, p), idx.chi_g(l, t, p));
          prod(idx.sc(l, t, p), idx.mu_clr(l, t, p));
        }
      }
      for (int k = 0; k < K; ++k) prod(idx.pi(l, k), idx.chi_i(l, k));
      for (int f = 0; f < NF; ++f) {
        for (int t = 0; t < T; ++t) {
          for (int p = 0; p < P; ++p) {
            prod(idx.fg(f, t, p), idx.mu_g(l, f, t, p));
            prod(idx.sg(f, t, p), idx.mu_sg(l, f, t, p));
            prod(idx.fl(f, t, p), idx.mu_c(l, f, t, p));
            prod(idx.sf(f, t, p), idx.mu_sf(l, f, t, p));
          }
        }
        for (int k = 0; k < K; ++k) {
          prod(idx.fv(f, k), idx.mu_i(l, f, k));
          prod(idx.si(f, k), idx.mu_si(l, f, k));
        }
      }
    }
  }

  std::shared_ptr<LmStructure> finish() {
    auto s = std::make_shared<LmStructure>();
    s->idx = idx;
    s->scale = scale;
    s->rows = static_cast<int>(rows.size());

    s->lower = VectorXd::Zero(idx.total);
    s->upper = VectorXd::Constant(idx.total, kInf);
    // Sign-free blocks: the alpha multipliers of the equality rows and the
    // multipliers of the bilinear equalities.
    for (int l = 0; l < idx.nl(); ++l) {
      auto free_range = [&](int local, int count) {
        for (int i = 0; i < count; ++i) {
          s->lower(idx.mult(l, local + i)) = -kInf;
        }
      };
      const int tp = idx.nf() * idx.T * idx.P;
      free_range(idx.a_g0, tp);
      free_range(idx.w_g0, tp);
      free_range(idx.a_c0, tp);
      free_range(idx.w_c0, tp);
      free_range(idx.a_i0, idx.nf() * idx.nk());
      free_range(idx.w_i0, idx.nf() * idx.nk());
    }

    std::vector<Eigen::Triplet<double>> trips;
    s->row_const = VectorXd::Zero(s->rows);
    for (int r = 0; r < s->rows; ++r) {
      RawRow& row = rows[r];
      double mag = std::abs(row.constant);
      for (auto& [v, c] : row.lin) mag = std::max(mag, std::abs(c) * scale[v]);
      for (auto& [i, j, c] : row.bil) {
        mag = std::max(mag, std::abs(c) * scale[i] * scale[j]);
      }
      if (mag <= 0.0) mag = 1.0;
      s->row_const(r) = row.constant / mag;
      for (auto& [v, c] : row.lin) {
        trips.emplace_back(r, v, c * scale[v] / mag);
      }
      for (auto& [i, j, c] : row.bil) {
        s->bilinear.push_back({r, i, j, c * scale[i] * scale[j] / mag});
      }
    }
    s->A.resize(s->rows, idx.total);
    s->A.setFromTriplets(trips.begin(), trips.end());

    double obj_mag = 0.0;
    for (auto& [i, j, c] : obj) {
      obj_mag = std::max(obj_mag, std::abs(c) * scale[i] * scale[j]);
    }
    if (obj_mag <= 0.0) obj_mag = 1.0;
    s->obj_scale = obj_mag;
    for (auto& [i, j, c] : obj) {
      s->objective.push_back({0, i, j, c * scale[i] * scale[j] / obj_mag});
    }
    return s;
  }
};

}  // namespace

LmProblem build_leyffer_munson(const MarketData& data) {
  validate_or_throw(data, /*require_firm_mix=*/true);
  LmBuilder builder(data);
  builder.assign_scales();
  builder.build_rows();
  builder.build_objective();
  auto structure = builder.finish();

  LmProblem p;
  p.data = data;
  p.index = builder.idx;
  p.structure = structure;
  p.nlp.n = builder.idx.total;
  p.nlp.eq_count = structure->rows;
  p.nlp.lower = structure->lower;
  p.nlp.upper = structure->upper;
  p.nlp.objective = [structure](const VectorXd& x, VectorXd* grad) {
    return structure->objective_value(x, grad);
  };
  p.nlp.eq_values = [structure](const VectorXd& x) {
    return structure->constraints(x);
  };
  p.nlp.eq_jt_product = [structure](const VectorXd& x, const VectorXd& v) {
    return structure->constraints_jt(x, v);
  };
  return p;
}

double lm_objective_value(const LmProblem& p, const VectorXd& x_physical) {
  VectorXd x = p.structure->to_solver(x_physical);
  return p.structure->objective_value(x, nullptr) * p.structure->obj_scale;
}

double lm_feasibility(const LmProblem& p, const VectorXd& x_physical) {
  VectorXd x = p.structure->to_solver(x_physical);
  VectorXd c = p.structure->constraints(x);
  return c.cwiseAbs().maxCoeff();
}

std::pair<LmPoint, SolveReport> solve_leyffer_munson(const LmProblem& p,
                                                     const LmPoint& start,
                                                     const NlpOptions& options) {
  VectorXd x0 = p.structure->to_solver(start.x);
  NlpResult res = solve_nlp_local(p.nlp, x0, options);
  LmPoint out;
  out.x = p.structure->to_physical(res.x);
  out.objective_value = lm_objective_value(p, out.x);
  SolveReport report = res.report;
  report.objective = out.objective_value;
  return {out, report};
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t attempt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (attempt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

struct SplitMix {
  std::uint64_t state;
  explicit SplitMix(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

}  // namespace

LmPoint random_start(const LmProblem& p, std::uint64_t seed) {
  const LmIndex& idx = p.index;
  const MarketData& data = p.data;
  SplitMix rng(seed);
  VectorXd x = VectorXd::Zero(idx.total);

  double a_max = 0.0;
  for (double a : data.demand.intercepts) a_max = std::max(a_max, a);
  const double inv_bound = a_max / data.demand.slope;

  auto cap_of = [&](int firm, int t) {
    return data.firms[firm].capacity(data.technologies[t].id);
  };

  // Primal draws.
  for (int l = 0; l < idx.nl(); ++l) {
    for (int t = 0; t < idx.T; ++t) {
      for (int per = 0; per < idx.P; ++per) {
        x(idx.pg(l, t, per)) =
            rng.uniform(0.0, cap_of(idx.leaders[l], t) + inv_bound);
      }
    }
    for (int k = 0; k < idx.nk(); ++k) {
      x(idx.pi(l, k)) = rng.uniform(0.0, inv_bound);
    }
  }
  for (int f = 0; f < idx.nf(); ++f) {
    for (int t = 0; t < idx.T; ++t) {
      for (int per = 0; per < idx.P; ++per) {
        x(idx.fg(f, t, per)) =
            rng.uniform(0.0, cap_of(idx.fringe[f], t) + inv_bound);
      }
    }
    for (int k = 0; k < idx.nk(); ++k) {
      x(idx.fv(f, k)) = rng.uniform(0.0, inv_bound);
    }
    for (int t = 0; t < idx.T; ++t) {
      for (int per = 0; per < idx.P; ++per) {
        x(idx.fl(f, t, per)) = rng.uniform(0.0, 100.0);
      }
    }
  }

  // Multipliers, including the sign-free blocks.
  for (int l = 0; l < idx.nl(); ++l) {
    for (int i = 0; i < idx.per_leader; ++i) {
      x(idx.mult(l, i)) = rng.uniform(0.0, 100.0);
    }
    for (int t = 0; t < idx.T; ++t) {
      for (int per = 0; per < idx.P; ++per) {
        x(idx.lam_pm(l, t, per)) = rng.uniform(0.0, 100.0);
      }
    }
  }

  // Slacks from their defining rows, clamped into the box.
  const double B = data.demand.slope;
  std::vector<double> total(idx.P, 0.0);
  for (int per = 0; per < idx.P; ++per) {
    for (int l = 0; l < idx.nl(); ++l) {
      for (int t = 0; t < idx.T; ++t) total[per] += x(idx.pg(l, t, per));
    }
    for (int f = 0; f < idx.nf(); ++f) {
      for (int t = 0; t < idx.T; ++t) total[per] += x(idx.fg(f, t, per));
    }
  }
  for (int l = 0; l < idx.nl(); ++l) {
    for (int t = 0; t < idx.T; ++t) {
      const int k = p.structure->idx.nk() > 0 ? -1 : -1;
      (void)k;
      for (int per = 0; per < idx.P; ++per) {
        double inv = 0.0;
        for (int kk = 0; kk < idx.nk(); ++kk) {
          if (idx.investable[kk] == t) inv = x(idx.pi(l, kk));
        }
        x(idx.sc(l, t, per)) = std::max(
            0.0, cap_of(idx.leaders[l], t) + inv - x(idx.pg(l, t, per)));
      }
    }
  }
  for (int f = 0; f < idx.nf(); ++f) {
    for (int t = 0; t < idx.T; ++t) {
      const double C = data.technologies[t].marginal_cost;
      for (int per = 0; per < idx.P; ++per) {
        const double W = data.demand.weights[per];
        const double price = data.demand.intercepts[per] - B * total[per];
        x(idx.sg(f, t, per)) =
            std::max(0.0, W * (C - price) + x(idx.fl(f, t, per)));
        double inv = 0.0;
        for (int kk = 0; kk < idx.nk(); ++kk) {
          if (idx.investable[kk] == t) inv = x(idx.fv(f, kk));
        }
        x(idx.sf(f, t, per)) = std::max(
            0.0, cap_of(idx.fringe[f], t) + inv - x(idx.fg(f, t, per)));
      }
    }
    for (int k = 0; k < idx.nk(); ++k) {
      const int t = idx.investable[k];
      double lam_sum = 0.0;
      for (int per = 0; per < idx.P; ++per) lam_sum += x(idx.fl(f, t, per));
      x(idx.si(f, k)) =
          std::max(0.0, *data.technologies[t].invest_cost - lam_sum);
    }
  }

  LmPoint out;
  out.x = x;
  out.objective_value = lm_objective_value(p, x);
  return out;
}

StrategyProfile profile_from_lm(const LmProblem& p, const LmPoint& point) {
  const LmIndex& idx = p.index;
  StrategyProfile s = StrategyProfile::zeros(p.data);
  for (int l = 0; l < idx.nl(); ++l) {
    const int firm = idx.leaders[l];
    for (int t = 0; t < idx.T; ++t) {
      for (int per = 0; per < idx.P; ++per) {
        s.gen.at(firm, t, per) = std::max(0.0, point.x(idx.pg(l, t, per)));
      }
    }
    for (int k = 0; k < idx.nk(); ++k) {
      s.inv.at(firm, idx.investable[k]) = std::max(0.0, point.x(idx.pi(l, k)));
    }
  }
  for (int f = 0; f < idx.nf(); ++f) {
    const int firm = idx.fringe[f];
    for (int t = 0; t < idx.T; ++t) {
      for (int per = 0; per < idx.P; ++per) {
        s.gen.at(firm, t, per) = std::max(0.0, point.x(idx.fg(f, t, per)));
        s.fringe_duals.at(firm, t, per) =
            std::max(0.0, point.x(idx.fl(f, t, per)));
      }
    }
    for (int k = 0; k < idx.nk(); ++k) {
      s.inv.at(firm, idx.investable[k]) = std::max(0.0, point.x(idx.fv(f, k)));
    }
  }
  s.clear_prices(p.data);
  return s;
}

LmPoint lm_point_from_profile(const LmProblem& p, const StrategyProfile& s) {
  const LmIndex& idx = p.index;
  const MarketData& data = p.data;
  VectorXd x = VectorXd::Zero(idx.total);
  StrategyProfile prof = s;
  prof.clear_prices(data);

  auto cap_of = [&](int firm, int t) {
    return data.firms[firm].capacity(data.technologies[t].id);
  };
  for (int l = 0; l < idx.nl(); ++l) {
    const int firm = idx.leaders[l];
    for (int t = 0; t < idx.T; ++t) {
      for (int per = 0; per < idx.P; ++per) {
        x(idx.pg(l, t, per)) = prof.gen.at(firm, t, per);
        double inv = 0.0;
        for (int k = 0; k < idx.nk(); ++k) {
          if (idx.investable[k] == t) inv = prof.inv.at(firm, t);
        }
        x(idx.sc(l, t, per)) = std::max(
            0.0, cap_of(firm, t) + inv - prof.gen.at(firm, t, per));
      }
    }
    for (int k = 0; k < idx.nk(); ++k) {
      x(idx.pi(l, k)) = prof.inv.at(firm, idx.investable[k]);
    }
  }
  for (int f = 0; f < idx.nf(); ++f) {
    const int firm = idx.fringe[f];
    for (int t = 0; t < idx.T; ++t) {
      const double C = data.technologies[t].marginal_cost;
      for (int per = 0; per < idx.P; ++per) {
        const double W = data.demand.weights[per];
        x(idx.fg(f, t, per)) = prof.gen.at(firm, t, per);
        x(idx.fl(f, t, per)) = prof.fringe_duals.at(firm, t, per);
        x(idx.sg(f, t, per)) =
            std::max(0.0, W * (C - prof.prices[per]) +
                              prof.fringe_duals.at(firm, t, per));
        double inv = 0.0;
        for (int k = 0; k < idx.nk(); ++k) {
          if (idx.investable[k] == t) inv = prof.inv.at(firm, t);
        }
        x(idx.sf(f, t, per)) = std::max(
            0.0, cap_of(firm, t) + inv - prof.gen.at(firm, t, per));
      }
    }
    for (int k = 0; k < idx.nk(); ++k) {
      const int t = idx.investable[k];
      x(idx.fv(f, k)) = prof.inv.at(firm, t);
      double lam_sum = 0.0;
      for (int per = 0; per < idx.P; ++per) {
        lam_sum += prof.fringe_duals.at(firm, t, per);
      }
      x(idx.si(f, k)) =
          std::max(0.0, *data.technologies[t].invest_cost - lam_sum);
    }
  }
  LmPoint out;
  out.x = x;
  out.objective_value = lm_objective_value(p, x);
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(OrderPolicy policy) {
  switch (policy) {
    case OrderPolicy::L1First: return "l1_first";
    case OrderPolicy::L2First: return "l2_first";
    case OrderPolicy::SplitHalf: return "split_half";
    case OrderPolicy::RoundRobin: return "round_robin";
  }
  return "unknown";
}

OrderPolicy order_policy_from_string(const std::string& name) {
  if (name == "l1_first") return OrderPolicy::L1First;
  if (name == "l2_first") return OrderPolicy::L2First;
  if (name == "split_half") return OrderPolicy::SplitHalf;
  if (name == "round_robin") return OrderPolicy::RoundRobin;
  throw std::invalid_argument("unknown order policy '" + name + "'");
}

std::vector<int> leader_order_for_attempt(const MarketData& data,
                                          OrderPolicy policy, int attempt,
                                          int total_attempts) {
  std::vector<int> order = data.price_maker_indices();
  auto reversed = [&order]() {
    std::vector<int> r(order.rbegin(), order.rend());
    return r;
  };
  switch (policy) {
    case OrderPolicy::L1First:
      return order;
    case OrderPolicy::L2First:
      return reversed();
    case OrderPolicy::SplitHalf:
      return attempt < (total_attempts + 1) / 2 ? order : reversed();
    case OrderPolicy::RoundRobin: {
      std::vector<int> r = order;
      std::rotate(r.begin(), r.begin() + attempt % r.size(), r.end());
      return r;
    }
  }
  return order;
}

GsOutcome gauss_seidel(const MarketData& data, const StrategyProfile& start,
                       const std::vector<int>& leader_order,
                       const GsOptions& options) {
  GsOutcome out;
  StrategyProfile profile = start;
  profile.clear_prices(data);

  int sweep = 0;
  bool movement_converged = false;
  for (; sweep < options.max_iter; ++sweep) {
    StrategyProfile before = profile;
    for (int leader : leader_order) {
      MpecProblem mp = build_mpec(data, data.firms[leader].id, profile);
      MpecSolution sol = solve_mpec(mp, profile, options.mpec);
      profile = sol.to_profile(mp);
    }
    double movement = 0.0;
    for (int leader : leader_order) {
      movement += profile.primal_block_distance(before, leader);
    }
    out.movement.push_back(movement);
    if (movement <= options.tol) {
      movement_converged = true;
      ++sweep;
      break;
    }
  }
  out.iterations = sweep;
  if (!movement_converged) return out;

  // Fixed-point verification: one more best response per leader.
  double deviation = 0.0;
  double max_profit = 0.0;
  std::vector<double> profits;
  for (int leader : data.price_maker_indices()) {
    const double current = profile.firm_profit(data, leader);
    profits.push_back(current);
    max_profit = std::max(max_profit, std::abs(current));
    MpecProblem mp = build_mpec(data, data.firms[leader].id, profile);
    MpecSolution sol = solve_mpec(mp, profile, options.mpec);
    deviation = std::max(deviation, sol.leader_profit - current);
  }
  if (deviation > options.deviation_tol_rel * (1.0 + max_profit)) {
    return out;  // not a fixed point after all
  }

  EquilibriumRecord rec;
  rec.profile = profile;
  rec.leader_profits = profits;
  for (int leader : leader_order) rec.leader_order.push_back(data.firms[leader].id);
  rec.gs_iterations = sweep;
  rec.deviation_residual = std::max(0.0, deviation);
  rec.fringe_residual = check_lower_level_optimality(data, profile);
  out.record = rec;
  return out;
}

namespace {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FRINGE_EPEC_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

}  // namespace

EquilibriumSet find_equilibria(const MarketData& data, int iterations,
                               std::uint64_t seed, OrderPolicy policy,
                               const FindOptions& options) {
  validate_or_throw(data, /*require_firm_mix=*/true);
  if (iterations < 1) {
    throw std::invalid_argument("find_equilibria: iterations must be >= 1");
  }
  LmProblem lm = build_leyffer_munson(data);

  struct AttemptResult {
    std::optional<EquilibriumRecord> record;
    bool lm_failed = false;
  };
  std::vector<AttemptResult> results(iterations);

  auto run_attempt = [&](int i) {
    const std::uint64_t attempt_seed = mix_seed(seed, i);
    LmPoint start = random_start(lm, attempt_seed);
    StrategyProfile gs_start;
    double lm_objective = start.objective_value;
    if (options.use_lm) {
      auto [point, report] = solve_leyffer_munson(lm, start, options.lm);
      if (report.status != SolveStatus::Optimal) {
        results[i].lm_failed = true;
        return;
      }
      lm_objective = point.objective_value;
      gs_start = profile_from_lm(lm, point);
    } else {
      gs_start = profile_from_lm(lm, start);
    }
    std::vector<int> order =
        leader_order_for_attempt(data, policy, i, iterations);
    GsOutcome gs = gauss_seidel(data, gs_start, order, options.gs);
    if (gs.record) {
      gs.record->seed = attempt_seed;
      gs.record->attempt = i;
      gs.record->lm_objective = lm_objective;
      results[i].record = std::move(gs.record);
    }
  };

  const int threads = std::min(resolve_threads(options.threads), iterations);
  if (threads <= 1) {
    for (int i = 0; i < iterations; ++i) run_attempt(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&]() {
        while (true) {
          const int i = next.fetch_add(1);
          if (i >= iterations) return;
          run_attempt(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  EquilibriumSet set;
  set.attempts = iterations;
  for (int i = 0; i < iterations; ++i) {
    if (results[i].record) {
      set.records.push_back(std::move(*results[i].record));
    } else if (results[i].lm_failed) {
      set.failure_reasons.lm_infeasible += 1;
    } else {
      set.failure_reasons.gs_no_convergence += 1;
    }
  }
  set.successes = static_cast<int>(set.records.size());
  return set;
}

}  // namespace fringe
