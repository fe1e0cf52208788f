import json
from pathlib import Path

import streamlit as st

from privsgd import config
from privsgd.exports import read_config_line, read_csv

st.title("Results Browser")

root = Path(st.text_input("Output directory", value=config.OUTPUT_DIR))
if not root.is_dir():
    st.info(f"No results under `{root}` yet.")
    st.stop()

runs = sorted(p for p in root.iterdir() if p.is_dir())
if not runs:
    st.info("No result directories found.")
    st.stop()

run_dir = st.selectbox("Result directory", runs, format_func=lambda p: p.name)

summary_path = run_dir / "summary.json"
summary = json.loads(summary_path.read_text()) if summary_path.exists() else {}
if summary:
    st.caption(f"command: `{summary.get('command', '?')}`")

csv_files = sorted(run_dir.glob("*.csv"))
if not csv_files:
    st.warning("No CSV outputs in this directory.")
else:
    choice = st.selectbox("Table", csv_files, format_func=lambda p: p.name)
    frame = read_csv(choice)
    if "bound_satisfied" in frame:
        failed = int((~frame["bound_satisfied"].astype(bool)).sum())
        if failed:
            st.error(f"{failed} cell(s) exceed the utility bound")
        else:
            st.success("Every cell satisfies the utility bound")
    st.dataframe(frame, use_container_width=True)
    with st.expander("Embedded configuration"):
        st.json(read_config_line(choice))
    st.download_button("Download CSV", choice.read_bytes(), file_name=choice.name, mime="text/csv")

if summary:
    with st.expander("summary.json"):
        st.json(summary)
