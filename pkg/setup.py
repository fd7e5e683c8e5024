# setup.py
from setuptools import setup, find_packages

setup(
    name="mcp-server-magnetostatics",
    version="0.1.0",
    packages=find_packages("src"),
    package_dir={"": "src"},
    package_data={"mcp_server_magnetostatics": ["data/*.csv"]},
    install_requires=[
        "mcp>=1.6.0,<2",
        "pydantic>=2.0.0",
        "numpy>=1.24,<2",
        "scipy>=1.10",
    ],
    extras_require={
        "test": ["pytest>=7.0"],
    },
    entry_points={
        "console_scripts": [
            "mcp-server-magnetostatics=mcp_server_magnetostatics:main",
            "magnetostatics-bench=mcp_server_magnetostatics.bench_cli:main",
        ],
    },
    python_requires=">=3.10",
    description="Nonlinear magnetostatics solver with certified descent iterations, served over MCP",
    keywords="mcp, magnetostatics, finite elements, newton, kacanov, armijo",
    project_urls={
        "MCP Docs": "https://modelcontextprotocol.io",
    },
)
