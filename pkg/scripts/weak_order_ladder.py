"""Distance between successive weak-transport orders as epsilon shrinks (atomic strong parameter set)."""

from optransport import verification


def main():
    res = verification.weak_order_ladder()
    print(f"{'eps':>10} {'|w1-w0|':>12} {'|w2-w1|':>12}")
    for e, a, b in zip(res["eps"], res["d10"], res["d21"]):
        print(f"{e:>10.3e} {a:>12.3e} {b:>12.3e}")
    print(f"slopes: {res['slope10']:.3f} {res['slope21']:.3f}")


if __name__ == "__main__":
    main()
