import math

import streamlit as st

from privsgd.errors import PrivSGDError
from privsgd.harness import cmd_calibrate
from privsgd.privacy import max_epsilon

st.title("Privacy Accountant")

mode = st.radio("Parameters", ["Internal (n, eps, delta)", "Target (eps_bar, delta_bar)"], horizontal=True)

c1, c2, c3 = st.columns(3)
with c1:
    n = st.number_input("n", min_value=16, value=10_000, step=1)
    L = st.number_input("L (Lipschitz constant)", min_value=1e-9, value=1.0, format="%.6g")
with c2:
    D = st.number_input("D (set diameter)", min_value=1e-9, value=1.0, format="%.6g")
    d = st.number_input("d (dimension)", min_value=1, value=10, step=1)
with c3:
    if mode.startswith("Internal"):
        eps = st.number_input("epsilon", min_value=1e-12, value=max_epsilon(int(n)), format="%.6g")
        delta = st.number_input("delta", min_value=1e-300, max_value=0.999, value=1e-6, format="%.3g")
        delta_prime = st.number_input("delta'", min_value=1e-300, max_value=0.999, value=1e-6, format="%.3g")
    else:
        eps_bar = st.number_input("eps_bar", min_value=1e-12, value=0.1, format="%.6g")
        delta_bar = st.number_input("delta_bar", min_value=1e-300, max_value=0.999, value=3e-6, format="%.3g")

st.caption(f"Regime: epsilon <= 1/(2*sqrt(n)) = {1 / (2 * math.sqrt(n)):.6g}")

try:
    if mode.startswith("Internal"):
        payload = cmd_calibrate(n=int(n), eps=eps, delta=delta, delta_prime=delta_prime, L=L, D=D, d=int(d))
    else:
        payload = cmd_calibrate(n=int(n), L=L, D=D, d=int(d), eps_bar=eps_bar, delta_bar=delta_bar)
except PrivSGDError as e:
    st.error(str(e))
    inequality = getattr(e, "inequality", "")
    if inequality:
        st.info(f"Violated: `{inequality}`")
    st.stop()

m1, m2, m3 = st.columns(3)
m1.metric("sigma", f"{payload['sigma']:.6g}")
m2.metric("eta", f"{payload['eta']:.6g}")
m3.metric("risk bound", f"{payload['risk_bound']:.6g}")

st.subheader("Privacy report")
st.json(payload["report"])
with st.expander("Full JSON"):
    st.json(payload)
