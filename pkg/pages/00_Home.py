import streamlit as st

from privsgd import __version__, config

accountant = st.Page("pages/01_Accountant.py", title="Privacy Accountant", icon=":material/calculate:")
results    = st.Page("pages/02_Results.py", title="Results Browser", icon=":material/table_chart:")

st.title("PrivSGD")
st.caption(f"Differentially private SGD toolkit, version {__version__}. Output directory: `{config.OUTPUT_DIR}`")

st.markdown("""
<style>
    #gallery div.stButton > button {
    width: 100%;
    padding: 1.1rem 1rem;
    border-radius: 1rem;
    font-size: 1.05rem;
    height: 5.5rem;
    }
    #gallery .subtitle {
    margin-top: .25rem;
    opacity: .75;
    font-size: .9rem;
    }
</style>
""", unsafe_allow_html=True)

apps = [
    {"label": "🧮  Privacy Accountant", "subtitle": "sigma, eta and the DP guarantee", "page": accountant},
    {"label": "📊  Results Browser",    "subtitle": "cells, tau and audit outputs",    "page": results},
]
st.markdown('<div id="gallery">', unsafe_allow_html=True)
cols = st.columns(len(apps))
for col, app in zip(cols, apps):
    with col:
        if st.button(app["label"], use_container_width=True):
            st.switch_page(app["page"])
        st.markdown(f'<div class="subtitle">{app["subtitle"]}</div>', unsafe_allow_html=True)
st.markdown('</div>', unsafe_allow_html=True)

st.divider()
st.markdown(
    "Experiments run from the command line: "
    "`python run_privsgd.py run --config experiment.env --seed 1`, "
    "`tau-sim`, `calibrate` and `audit`. This UI only reads what they write."
)
