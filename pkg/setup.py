from setuptools import setup, find_packages

setup(
    name="fdesq",
    version="0.1",
    description="Supervised FDES learning by backpropagation with event-adjusted stock prediction",
    packages=find_packages(exclude=["tests"]),
    package_data={"backend": ["templates/*.j2"]},
    python_requires=">=3.10",
    install_requires=[
        "numpy",
        "scipy",
        "pandas",
        "scikit-learn",
        "Jinja2",
        "python-docx",
        "python-dotenv",
        "tqdm",
    ],
    entry_points={"console_scripts": ["fdesq = backend.main:main"]},
)
