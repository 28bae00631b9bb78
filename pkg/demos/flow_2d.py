"""Two-dimensional refinement on a synthetic flow field.

Compares three fits to the cost volume (separable parabola, anisotropic
line fits and a full paraboloid) with the queen-split barycentric refiner,
which interpolates patch features instead. On a noise-free pure translation
the feature refiner recovers the shift up to round-off.
"""

from subpix import REJECT, evaluate, make_shifted_pair, make_texture, match

SHIFT = (0.35, -0.4)


def main():
    pair = make_shifted_pair(make_texture((48, 48), seed=7), SHIFT)
    for method, kind in (("separable-parabola", "zncc"), ("anisotropic-parabola", "zncc"),
                         ("paraboloid", "zncc"),
                         ("queen-split", "zncc"), ("queen-split", "ssd")):
        res = match(pair.source, pair.target, ((-2, 2), (-2, 2)), kind, 5, method,
                    border=REJECT)
        rep = evaluate(res.d_hat, res.d_round, pair.truth(), valid=res.valid)
        print(f"{method:>20} {kind:>5}: MD {rep.md:.4f} px, RMSE {rep.rmse:.4f} px, "
              f"{rep.n_inliers} inliers")


if __name__ == "__main__":
    main()
