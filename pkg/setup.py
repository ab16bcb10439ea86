from setuptools import setup, find_packages

setup(
    name="granulite",
    version="0.1.1",
    description="Stockpile surface reconstruction, aggregate segmentation and particle morphometrics",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"granulite.services": ["*.yaml"]},
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "scikit-image>=0.19",
        "pandas",
        "pydantic>=2.4.0",
        "python-dotenv>=1.0.0",
        "pyyaml"
    ],
    entry_points={
        "console_scripts": ["granulite=granulite.main:main"],
    },
)
