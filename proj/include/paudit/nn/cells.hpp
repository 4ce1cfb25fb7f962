//
// Copyright 2026 The paudit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// LSTM and GRU cells with hand-derived backward steps.
//
// LSTM gate rows are stacked [input, forget, candidate, output]:
//   i = sig(a_i)  f = sig(a_f)  u = tanh(a_u)  o = sig(a_o)
//   c = f*c_prev + i*u          h = o*tanh(c)
// GRU rows are stacked [update, reset, candidate]:
//   z = sig(Wz x + Uz h_prev + bz)    r = sig(Wr x + Ur h_prev + br)
//   n = tanh(Wn x + Un (r*h_prev) + bn)
//   h = (1-z)*n + z*h_prev

#pragma once

#include <string>

#include "paudit/nn/params.hpp"

namespace paudit::nn {

enum class CellType { lstm, gru };

inline CellType parse_cell(const std::string& s) {
  if (s == "lstm" || s == "LSTM") return CellType::lstm;
  if (s == "gru" || s == "GRU") return CellType::gru;
  throw Error("unknown cell type '" + s + "'");
}

inline std::string to_string(CellType c) { return c == CellType::lstm ? "lstm" : "gru"; }

inline Eigen::Index gate_count(CellType c) { return c == CellType::lstm ? 4 : 3; }

struct CellSlots {
  std::size_t wx = 0, wh = 0, b = 0;
};

inline CellSlots add_cell(ParamSet& p, const std::string& prefix, CellType cell,
                          Eigen::Index input, Eigen::Index hidden) {
  const Eigen::Index g = gate_count(cell) * hidden;
  CellSlots s;
  s.wx = p.add(prefix + ".wx", g, input);
  s.wh = p.add(prefix + ".wh", g, hidden);
  s.b = p.add(prefix + ".b", g, 1);
  return s;
}

// Recurrent state. `c` is empty for GRU cells.
struct CellState {
  Vector h;
  Vector c;

  static CellState zeros(CellType cell, Eigen::Index hidden) {
    return {Vector::Zero(hidden), cell == CellType::lstm ? Vector::Zero(hidden) : Vector()};
  }
};

// Everything the backward step needs.
struct StepCache {
  Vector x;
  CellState prev;
  Vector gates;   // activated gate values, stacked as documented above
  Vector rh;      // GRU: r * h_prev
  Vector tanh_c;  // LSTM: tanh(c)
  CellState next;
};

inline Vector sigmoid(const Vector& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }

inline StepCache cell_step(CellType cell, const ParamSet& p, const CellSlots& s,
                           const Vector& x, const CellState& prev) {
  const Matrix& wx = p[s.wx];
  const Matrix& wh = p[s.wh];
  const Eigen::Index hidden = wh.cols();
  if (x.size() != wx.cols()) throw Error("cell input width mismatch");
  if (prev.h.size() != hidden) throw Error("cell hidden width mismatch");
  if (cell == CellType::lstm && prev.c.size() != hidden) throw Error("cell state width mismatch");

  StepCache k;
  k.x = x;
  k.prev = prev;
  if (cell == CellType::lstm) {
    Vector a = wx * x + wh * prev.h + p[s.b].col(0);
    k.gates.resize(4 * hidden);
    k.gates.segment(0, 2 * hidden) = sigmoid(a.segment(0, 2 * hidden));
    k.gates.segment(2 * hidden, hidden) = a.segment(2 * hidden, hidden).array().tanh().matrix();
    k.gates.segment(3 * hidden, hidden) = sigmoid(a.segment(3 * hidden, hidden));
    const auto i = k.gates.segment(0, hidden).array();
    const auto f = k.gates.segment(hidden, hidden).array();
    const auto u = k.gates.segment(2 * hidden, hidden).array();
    const auto o = k.gates.segment(3 * hidden, hidden).array();
    k.next.c = (f * prev.c.array() + i * u).matrix();
    k.tanh_c = k.next.c.array().tanh().matrix();
    k.next.h = (o * k.tanh_c.array()).matrix();
  } else {
    Vector ax = wx * x + p[s.b].col(0);
    Vector azr = ax.segment(0, 2 * hidden) + wh.topRows(2 * hidden) * prev.h;
    k.gates.resize(3 * hidden);
    k.gates.segment(0, 2 * hidden) = sigmoid(azr);
    const auto z = k.gates.segment(0, hidden).array();
    const auto r = k.gates.segment(hidden, hidden).array();
    k.rh = (r * prev.h.array()).matrix();
    k.gates.segment(2 * hidden, hidden) =
        (ax.segment(2 * hidden, hidden) + wh.bottomRows(hidden) * k.rh).array().tanh().matrix();
    const auto n = k.gates.segment(2 * hidden, hidden).array();
    k.next.h = ((1.0 - z) * n + z * prev.h.array()).matrix();
  }
  return k;
}

struct StepGrad {
  Vector dx;
  Vector dh_prev;
  Vector dc_prev;  // empty for GRU
};

// Accumulates parameter gradients into `g`. `dc` is ignored for GRU.
inline StepGrad cell_step_backward(CellType cell, const ParamSet& p, ParamSet& g,
                                   const CellSlots& s, const StepCache& k, const Vector& dh,
                                   const Vector& dc) {
  const Matrix& wx = p[s.wx];
  const Matrix& wh = p[s.wh];
  const Eigen::Index hidden = wh.cols();
  StepGrad out;
  Vector da(gate_count(cell) * hidden);
  if (cell == CellType::lstm) {
    const auto i = k.gates.segment(0, hidden).array();
    const auto f = k.gates.segment(hidden, hidden).array();
    const auto u = k.gates.segment(2 * hidden, hidden).array();
    const auto o = k.gates.segment(3 * hidden, hidden).array();
    const auto tc = k.tanh_c.array();
    Eigen::ArrayXd dcell = dh.array() * o * (1.0 - tc * tc);
    if (dc.size() == hidden) dcell += dc.array();
    da.segment(0, hidden) = (dcell * u * i * (1.0 - i)).matrix();
    da.segment(hidden, hidden) = (dcell * k.prev.c.array() * f * (1.0 - f)).matrix();
    da.segment(2 * hidden, hidden) = (dcell * i * (1.0 - u * u)).matrix();
    da.segment(3 * hidden, hidden) = (dh.array() * tc * o * (1.0 - o)).matrix();
    out.dc_prev = (dcell * f).matrix();
    g[s.wh].noalias() += da * k.prev.h.transpose();
    out.dh_prev = wh.transpose() * da;
  } else {
    const auto z = k.gates.segment(0, hidden).array();
    const auto r = k.gates.segment(hidden, hidden).array();
    const auto n = k.gates.segment(2 * hidden, hidden).array();
    const auto hp = k.prev.h.array();
    Eigen::ArrayXd dn = dh.array() * (1.0 - z);
    Eigen::ArrayXd dz = dh.array() * (hp - n);
    da.segment(2 * hidden, hidden) = (dn * (1.0 - n * n)).matrix();
    Vector drh = wh.bottomRows(hidden).transpose() * da.segment(2 * hidden, hidden);
    Eigen::ArrayXd dr = drh.array() * hp;
    da.segment(0, hidden) = (dz * z * (1.0 - z)).matrix();
    da.segment(hidden, hidden) = (dr * r * (1.0 - r)).matrix();
    g[s.wh].topRows(2 * hidden).noalias() += da.segment(0, 2 * hidden) * k.prev.h.transpose();
    g[s.wh].bottomRows(hidden).noalias() += da.segment(2 * hidden, hidden) * k.rh.transpose();
    out.dh_prev = (dh.array() * z + drh.array() * r).matrix();
    out.dh_prev.noalias() += wh.topRows(2 * hidden).transpose() * da.segment(0, 2 * hidden);
  }
  g[s.wx].noalias() += da * k.x.transpose();
  g[s.b].col(0) += da;
  out.dx = wx.transpose() * da;
  return out;
}

inline CellState lstm_step(const ParamSet& p, const CellSlots& s, const Vector& x,
                           const CellState& prev) {
  return cell_step(CellType::lstm, p, s, x, prev).next;
}

inline CellState gru_step(const ParamSet& p, const CellSlots& s, const Vector& x,
                          const CellState& prev) {
  return cell_step(CellType::gru, p, s, x, prev).next;
}

}  // namespace paudit::nn
