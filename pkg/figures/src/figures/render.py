"""Render the standard figure set from simulator output files.

All figures are drawn at a fixed size and dpi onto the Agg canvas, so
identical inputs and library versions give byte-identical images.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .loaders import SchemaError, long_to_series, read_csv_columns, read_vtk_structured_points

FIGURE_IDS = ("2a", "2b", "3", "4a", "4bc")


def waterfall_offsets(values: np.ndarray, scale: float = 1.2) -> np.ndarray:
    """Vertical offsets separating stacked curves; uniform across curves."""
    span = np.abs(values).max()
    step = scale * (2.0 * span if span > 0 else 1.0)
    return step * np.arange(values.shape[0])


def peak_positions(x: np.ndarray, values: np.ndarray) -> np.ndarray:
    """x location of the maximum of each curve (diagnostics and tests)."""
    return x[np.argmax(values, axis=1)]


def _new_axes():
    fig, ax = plt.subplots(figsize=(6.4, 4.8), dpi=150)
    return fig, ax


def _apply_ranges(ax, xlim=None, ylim=None):
    if xlim is not None:
        ax.set_xlim(*xlim)
    if ylim is not None:
        ax.set_ylim(*ylim)


def render_2a(inputs, out, xlim=None, ylim=None, t_min=0.4e-9):
    """Stacked time series of the potential along x at the probe depth."""
    cols = read_csv_columns(inputs[0], ("t_s", "x_m", "phi_V"))
    times, x, values = long_to_series(cols["t_s"], cols["x_m"], cols["phi_V"])
    keep = times >= t_min - 1e-15
    times, values = times[keep], values[keep]
    if times.size == 0:
        raise SchemaError(f"{inputs[0]}: no curves at or after t = {t_min:g} s")
    offsets = waterfall_offsets(values)
    fig, ax = _new_axes()
    for k in range(times.size):
        ax.plot(x * 1e6, (values[k] + offsets[k]) * 1e3, lw=0.8, color="k")
        ax.annotate(f"{times[k] * 1e9:.1f} ns", (x[-1] * 1e6, offsets[k] * 1e3),
                    fontsize=6, va="center")
    ax.set_xlabel("x (µm)")
    ax.set_ylabel("potential (mV, curves offset)")
    _apply_ranges(ax, xlim, ylim)
    fig.savefig(out)
    plt.close(fig)


def render_2b(inputs, out, xlim=None, ylim=None):
    """Grayscale x-z map of the potential at the mid-y plane of a snapshot."""
    vtk = read_vtk_structured_points(inputs[0])
    if "phi" not in vtk["fields"]:
        raise SchemaError(f"{inputs[0]}: no 'phi' scalar field")
    phi = vtk["fields"]["phi"]
    nz, ny, nx = phi.shape
    plane = phi[:, ny // 2, :]
    hx, hy, hz = vtk["spacing"]
    fig, ax = _new_axes()
    vmax = np.abs(plane).max()
    im = ax.imshow(
        plane * 1e3,
        origin="lower",
        extent=(0.0, (nx - 1) * hx * 1e6, 0.0, (nz - 1) * hz * 1e6),
        cmap="gray",
        vmin=-vmax * 1e3,
        vmax=vmax * 1e3,
        aspect="auto",
    )
    fig.colorbar(im, ax=ax, label="potential (mV)")
    ax.set_xlabel("x (µm)")
    ax.set_ylabel("z (µm)")
    ax.set_title(f"min {plane.min() * 1e3:.3g} mV, max {plane.max() * 1e3:.3g} mV",
                 fontsize=8)
    _apply_ranges(ax, xlim, ylim)
    fig.savefig(out)
    plt.close(fig)


def render_3(inputs, out, xlim=None, ylim=None):
    """Infidelity of the two-level state against the tunnel coupling."""
    cols = read_csv_columns(inputs[0], ("delta_ueV", "infidelity"))
    fig, ax = _new_axes()
    ax.plot(cols["delta_ueV"], cols["infidelity"], "k.-", lw=0.8, ms=3)
    ax.set_xlabel("tunnel coupling Δ (µeV)")
    ax.set_ylabel("infidelity 1 - |⟨Ψp|Ψ0⟩|²")
    ax.set_ylim(bottom=0.0)
    _apply_ranges(ax, xlim, ylim)
    fig.savefig(out)
    plt.close(fig)


def render_4a(inputs, out, xlim=None, ylim=None):
    """rms and max-modulus of the induced potential vs pulse duration."""
    cols = read_csv_columns(inputs[0], ("t_d_s", "rms_V", "max_modulus_V"))
    fig, ax = _new_axes()
    ax.plot(cols["t_d_s"] * 1e9, cols["rms_V"] * 1e3, "ko-", ms=4, label="rms")
    ax.plot(cols["t_d_s"] * 1e9, cols["max_modulus_V"] * 1e3, "ks--", ms=4,
            mfc="none", label="max(modulus)")
    ax.set_xlabel("pulse duration t_d (ns)")
    ax.set_ylabel("amplitude (mV)")
    ax.legend(frameon=False)
    _apply_ranges(ax, xlim, ylim)
    fig.savefig(out)
    plt.close(fig)


def render_4bc(inputs, out, xlim=None, ylim=None, t_max=0.5e-9):
    """Vertical-displacement relaxation: stacked u_z(x) curves plus the
    center-point u_z(t) trace."""
    if len(inputs) < 2:
        raise SchemaError("figure 4bc needs two inputs: uz_line.csv, uz_center.csv")
    line = read_csv_columns(inputs[0], ("t_s", "x_m", "uz_m"))
    center = read_csv_columns(inputs[1], ("t_s", "uz_m"))
    times, x, values = long_to_series(line["t_s"], line["x_m"], line["uz_m"])
    keep = times <= t_max + 1e-15
    times, values = times[keep], values[keep]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 7.2), dpi=150)
    offsets = waterfall_offsets(values)
    for k in range(times.size):
        ax1.plot(x * 1e6, (values[k] + offsets[k]) * 1e12, lw=0.8, color="k")
    ax1.set_xlabel("x (µm)")
    ax1.set_ylabel("u_z (pm, curves offset)")
    sel = center["t_s"] <= t_max + 1e-15
    ax2.plot(center["t_s"][sel] * 1e9, center["uz_m"][sel] * 1e12, "k-", lw=1.0)
    ax2.set_xlabel("t (ns)")
    ax2.set_ylabel("u_z at the domain center (pm)")
    _apply_ranges(ax1, xlim, ylim)
    fig.savefig(out)
    plt.close(fig)


RENDERERS = {
    "2a": render_2a,
    "2b": render_2b,
    "3": render_3,
    "4a": render_4a,
    "4bc": render_4bc,
}


def render(figure_id: str, inputs, out, xlim=None, ylim=None) -> str:
    if figure_id not in RENDERERS:
        raise SchemaError(f"unknown figure id {figure_id!r}; expected one of {FIGURE_IDS}")
    RENDERERS[figure_id](list(inputs), out, xlim=xlim, ylim=ylim)
    return out
