# app.py  (router only)
import streamlit as st

st.set_page_config(page_title="PrivSGD", layout="wide")

home       = st.Page("pages/00_Home.py", title="Home", icon=":material/home:")
accountant = st.Page("pages/01_Accountant.py", title="Privacy Accountant", icon=":material/calculate:")
results    = st.Page("pages/02_Results.py", title="Results Browser", icon=":material/table_chart:")

pg = st.navigation([home, accountant, results], position="hidden")

# don't render any other UI in app.py
pg.run()
