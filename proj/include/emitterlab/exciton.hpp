#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "emitterlab/fitlab.hpp"

namespace emitterlab::exciton {

enum class Phase { kHexagonal, kCubic };

/// Bilayer stacking sequence embedded in unbounded hexagonal material.
///
/// Bilayer i (counting from first_index) is centred at z = i * bilayer_thickness,
/// so index 0 sits at z = 0. Indices outside the list are hexagonal.
struct StackProfile {
  std::vector<Phase> bilayers;
  int first_index = 0;
  double bilayer_thickness = 0.259;  ///< nm

  /// 'h'/'c' characters; spaces, commas and '|' are ignored.
  static StackProfile parse(std::string_view text, int first_index, double thickness = 0.259);
  /// n cubic bilayers centred on index 0 (index -(n-1)/2 upwards).
  static StackProfile cubic_block(int n, double thickness = 0.259);
  /// Two cubic bilayers, `gap` hexagonal bilayers, one cubic bilayer, starting at index -1.
  static StackProfile two_plus_one(int gap, double thickness = 0.259);

  int last_index() const { return first_index + static_cast<int>(bilayers.size()) - 1; }
  Phase phase_at(int index) const;
  double center_of(int index) const { return index * bilayer_thickness; }
  int cubic_count() const;
  /// Hexagonal bilayers touching a hexagonal/cubic boundary, ascending and unique.
  std::vector<int> interface_bilayers() const;
  StackProfile shifted(int bilayers_offset) const;
  /// Reflection about z = 0: index i maps to -i.
  StackProfile mirrored() const;
  std::string to_string() const;
};

struct ExcitonParams {
  double m_eff = 0.2;             ///< electron mass, units of the free-electron mass
  double eps_r = 9.5;
  double softening = 0.3;         ///< Coulomb softening length, nm
  double e0 = 0.9184;             ///< ZPL energy in homogeneous hexagonal material, eV
  double dE_cbm = -0.25;          ///< CBM offset cubic - hexagonal, eV
  double dE_vbm = 0.05;           ///< VBM offset cubic - hexagonal, eV
  double interface_field = 2.9;   ///< MV/cm inside cubic segments
  /// +1: electron potential energy falls towards +z inside cubic material; -1 mirrors it.
  int polarity = 1;

  void validate() const;
  double field_ev_per_nm() const;
};

struct GridSpec {
  double half_width = 20.0;  ///< nm
  double step = 0.02;        ///< nm
  double center = 0.0;       ///< nm

  std::size_t points() const;
};

/// Minimum hexagonal padding between the listed stack and either wall, nm.
inline constexpr double kMinPadding = 10.0;

/// Band-edge profiles on a uniform grid. Values are cell averages over
/// [z - h/2, z + h/2], so partially covered cells blend the two phases.
struct PotentialGrid {
  double z0 = 0.0;
  double step = 0.0;
  std::vector<double> v_cbm;  ///< eV
  std::vector<double> v_vbm;  ///< eV

  std::size_t size() const { return v_cbm.size(); }
  double z(std::size_t i) const { return z0 + static_cast<double>(i) * step; }
};

/// Band edges at a point: phase offset plus the electrostatic term.
struct BandEdges {
  double cbm = 0.0;
  double vbm = 0.0;
};
BandEdges band_edges_at(const StackProfile& stack, const ExcitonParams& params, double z);

/// The electrostatic term is -polarity * F * (cubic length to the left of z):
/// a uniform field F inside cubic bilayers, zero in hexagonal ones. Throws
/// DomainTooSmallError unless both walls are at least kMinPadding from the stack.
PotentialGrid build_potential(const StackProfile& stack, const ExcitonParams& params, const GridSpec& grid);

/// Flat potential on the same grid (the hexagonal reference).
PotentialGrid flat_potential(const GridSpec& grid);

struct Tridiagonal {
  std::vector<double> diag;
  std::vector<double> off;  ///< size n - 1
};

/// -hbar^2/(2 m) d^2/dz^2 + V_cbm - e^2 / (4 pi eps0 eps_r sqrt((z - z_h)^2 + s^2)),
/// three-point stencil with hard walls just beyond the grid ends.
Tridiagonal electron_hamiltonian(const PotentialGrid& potential, double hole_z, const ExcitonParams& params);

struct Eigenpair {
  double value = 0.0;
  std::vector<double> vector;  ///< unit Euclidean norm
  int iterations = 0;
};
/// Lowest eigenpair of a symmetric tridiagonal matrix: Sturm-sequence bisection
/// for the value, inverse iteration for the vector. Throws EigenSolverError.
Eigenpair lowest_eigenpair(const Tridiagonal& matrix);

/// Wall density above which a state is flagged as touching the boundary.
inline constexpr double kWallDensityLimit = 1e-6;

struct ElectronState {
  double energy = 0.0;       ///< eV
  std::vector<double> psi;   ///< sum psi^2 h = 1
  double mean_z = 0.0;       ///< nm
  double wall_density = 0.0; ///< max |psi|^2 at the two end points, 1/nm
  bool boundary_contaminated = false;
};

ElectronState solve_electron(const PotentialGrid& potential, double hole_z, const ExcitonParams& params);

struct ZplEntry {
  int defect_index = 0;
  double zpl_nm = 0.0;
  double zpl_ev = 0.0;
  /// V_cbm at the defect minus the electron ground energy, eV.
  double binding_ev = 0.0;
  bool boundary_warning = false;
};

/// E = E0 + [V_vbm(z_d) - V_vbm_ref] - [E_e(z_d) - E_e_ref]: the hole level
/// shift plus the change in electron binding, both relative to the same
/// hole position in purely hexagonal material on the same grid.
ZplEntry zpl_for_defect(const StackProfile& stack, int defect_index, const ExcitonParams& params,
                        const GridSpec& grid = {});

struct HistogramBin {
  double lambda_nm = 0.0;  ///< bin centre
  std::size_t count = 0;
};

struct ZplSpectrum {
  std::vector<ZplEntry> entries;  ///< in the order of the requested positions
  double bin_nm = 10.0;
  std::vector<HistogramBin> histogram;
};

/// Solves every position (concurrently; `threads` = 0 uses default_thread_count()).
ZplSpectrum zpl_distribution(const StackProfile& stack, const std::vector<int>& positions,
                             const ExcitonParams& params, const GridSpec& grid = {}, unsigned threads = 0,
                             double bin_nm = 10.0);

/// Contiguous histogram of wavelengths with bins [k w, (k+1) w).
std::vector<HistogramBin> wavelength_histogram(const std::vector<double>& lambda_nm, double bin_nm);

struct WavelengthCluster {
  double mean_nm = 0.0;
  double min_nm = 0.0;
  double max_nm = 0.0;
  std::size_t count = 0;
};
/// Sorted wavelengths split wherever neighbours differ by more than max_gap_nm.
std::vector<WavelengthCluster> cluster_wavelengths(std::vector<double> lambda_nm, double max_gap_nm = 10.0);

struct CalibrationTargets {
  double short_nm = 1100.0;
  double long_nm = 1350.0;
  double dE_cbm_lower = -1.0;
  double dE_cbm_upper = 0.0;
};

struct Calibration {
  ExcitonParams params;
  fitlab::FitResult fit;  ///< dE_cbm, e0
  double short_nm = 0.0;  ///< calibrated cluster means
  double long_nm = 0.0;
};

/// Tunes (dE_cbm, E0) so the two interface-defect clusters of `stack` land on
/// the targets, by bounded least squares in wavelength.
Calibration calibrate(const StackProfile& stack, const ExcitonParams& params, const CalibrationTargets& targets = {},
                      const GridSpec& grid = {});

/// `defect_index,zpl_nm,binding_ev`
void write_spectrum_csv(std::ostream& out, const ZplSpectrum& spectrum);
/// `lambda_nm,count`
void write_zpl_histogram_csv(std::ostream& out, const ZplSpectrum& spectrum);

}  // namespace emitterlab::exciton
